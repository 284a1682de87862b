"""Command-line entry points: serve, client, simulate, pollute, render,
validate-config.

Exit codes: 0 success, 1 validation failure, 2 usage or runtime error.
Non-interactive and deterministic given seeds; suitable for CI.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from .config import ExperimentConfig, parse_config
from .errors import ConfigError, ReadinessError
from .pollution import PollutionSpec, pollute
from .report import report_from_json
from .table import DatasetMeta, load_table, save_table


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"address must be host:port, got {text!r}")
    return host, int(port)


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, global_seed=args.seed)
    if getattr(args, "timestamp", None) is not None:
        config = dataclasses.replace(
            config, report=dataclasses.replace(config.report, timestamp=args.timestamp))
    if getattr(args, "output_dir", None) is not None:
        config = dataclasses.replace(config, output_dir=args.output_dir)
    return config


def _cmd_validate_config(args: argparse.Namespace) -> int:
    try:
        parse_config(args.config)
    except ConfigError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print("ok")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    from .federation import run_in_process

    config = _load_config(args)
    run = run_in_process(config)
    html_path, json_path = run.report_paths or ("", "")
    summary = run.report.data["summary"]
    print(f"report written to {html_path}")
    print(f"outcomes: {summary.get('ready', 0)} ready, "
          f"{summary.get('flagged', 0)} flagged, "
          f"{summary.get('degenerate', 0)} degenerate, "
          f"{len(summary['absent'])} absent")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .federation import serve

    config = _load_config(args)
    run = serve(config, _parse_addr(args.listen))
    print(f"report written to {run.report_paths[0] if run.report_paths else '-'}")
    return 0


def _cmd_client(args: argparse.Namespace) -> int:
    from .federation import client_main_from_config

    config = _load_config(args)
    outcomes = client_main_from_config(config, args.client_id,
                                       _parse_addr(args.server))
    for o in outcomes:
        print(f"{o.module_id}: {o.final_status} "
              f"({len(o.trace)} iteration{'s' if len(o.trace) != 1 else ''})")
    return 0


def _cmd_pollute(args: argparse.Namespace) -> int:
    spec_raw = yaml.safe_load(args.spec)
    if not isinstance(spec_raw, dict) or "kind" not in spec_raw:
        raise ConfigError("--spec must be a mapping with a 'kind' key")
    kind = spec_raw.pop("kind")
    seed = int(spec_raw.pop("rng_seed", 0))
    meta = DatasetMeta()
    if args.meta:
        meta_raw = yaml.safe_load(args.meta)
        if not isinstance(meta_raw, dict):
            raise ConfigError("--meta must be a mapping")
        meta = DatasetMeta(
            label_column=meta_raw.get("label_column"),
            sensitive_feature=meta_raw.get("sensitive_feature"),
            quasi_identifiers=tuple(meta_raw.get("quasi_identifiers") or ()),
            positive_label=meta_raw.get("positive_label"),
        )
    table = load_table(args.input, args.format, meta)
    polluted = pollute(table, PollutionSpec(kind, spec_raw, seed))
    save_table(polluted, args.output, args.format)
    print(f"wrote {polluted.n_rows} rows to {args.output}")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    report = report_from_json(Path(args.input).read_text(encoding="utf-8"))
    Path(args.output).write_text(report.html, encoding="utf-8")
    print(f"rendered {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedready",
        description="Data-readiness engine for federated settings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("-c", "--config", required=True, help="experiment YAML")
        p.add_argument("--seed", type=int, default=None,
                       help="override seeds.global")
        p.add_argument("--timestamp", default=None,
                       help="inject the report timestamp (ISO-8601)")
        p.add_argument("--output-dir", default=None, help="override output_dir")

    p = sub.add_parser("simulate", help="run server and all clients in-process")
    add_config_opts(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("serve", help="run the aggregation server")
    add_config_opts(p)
    p.add_argument("--listen", default="127.0.0.1:7600", help="host:port")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("client", help="run one client against a server")
    add_config_opts(p)
    p.add_argument("--client-id", required=True)
    p.add_argument("--server", default="127.0.0.1:7600", help="host:port")
    p.set_defaults(fn=_cmd_client)

    p = sub.add_parser("pollute", help="apply a pollution spec to a data file")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-s", "--spec", required=True,
                   help="YAML mapping, e.g. '{kind: gaussian_noise, fraction: 0.9, "
                        "std_dev: 2, rng_seed: 7}'")
    p.add_argument("--format", choices=["csv", "ndjson"], default=None)
    p.add_argument("--meta", default=None,
                   help="YAML mapping of dataset meta (label_column, ...)")
    p.set_defaults(fn=_cmd_pollute)

    p = sub.add_parser("render", help="rebuild report.html from report.json")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("validate-config", help="check an experiment YAML")
    p.add_argument("-c", "--config", required=True)
    p.set_defaults(fn=_cmd_validate_config)

    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ReadinessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
