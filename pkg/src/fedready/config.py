"""Experiment configuration: YAML schema, validation, canonical emission, and
deterministic construction of per-client tables.

One file drives the whole experiment (server and all clients). All defaults
are materialized at parse time, so ``parse_config(render_config(c)) == c``.
Seeds for stochastic steps are derived from the global seed and stable string
labels, never from config order alone.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .engine import DEFAULT_MAX_ITERATIONS, ModuleRegistry, builtin_registry
from .errors import ConfigError
from .pollution import (
    ImageLikeProfile,
    PartitionSpec,
    PollutionSpec,
    TabularProfile,
    partition,
    pollute,
    synth_table,
)
from .rules import parse_rule
from .table import DataTable, DatasetMeta, load_table

DEFAULT_SAMPLE_SIZE = 200
DEFAULT_DEADLINE = 30.0
DEFAULT_HISTOGRAM_BINS = 20
OUTPUT_DIR_ENV = "FEDREADY_OUTPUT_DIR"

_POLLUTION_KINDS = {
    "gaussian_noise", "duplicate_rows", "upcast_precision",
    "inject_outliers", "skew_sensitive_groups", "degrade_anonymity",
}
_PARTITION_STRATEGIES = {"dirichlet_label_skew", "by_categorical_column"}


def derive_seed(global_seed: int, label: str) -> int:
    """Stable 63-bit seed for a named stochastic step."""
    digest = hashlib.sha256(f"{global_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class SynthSpec:
    profile: str  # tabular | image
    n_rows: int
    n_features: int = 4
    n_groups: int = 2
    n_classes: int = 2
    n_pixels: int = 16


@dataclass(frozen=True)
class PollutionEntry:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    rng_seed: int | None = None  # None: derive from the global seed


@dataclass(frozen=True)
class ClientConfig:
    client_id: str
    data: str | None = None
    format: str | None = None
    synth: SynthSpec | None = None
    meta: DatasetMeta | None = None
    pollution: tuple[PollutionEntry, ...] = ()


@dataclass(frozen=True)
class SourceConfig:
    data: str | None = None
    format: str | None = None
    synth: SynthSpec | None = None
    meta: DatasetMeta | None = None


@dataclass(frozen=True)
class ModuleConfig:
    name: str
    module_id: str
    rule: str | None = None
    metric_args: dict[str, Any] = field(default_factory=dict)
    remedy_args: dict[str, Any] = field(default_factory=dict)
    max_iterations: int = DEFAULT_MAX_ITERATIONS


@dataclass(frozen=True)
class PcaConfig:
    feature_columns: tuple[str, ...] | None = None  # None: all numeric non-label
    sample_size: int = DEFAULT_SAMPLE_SIZE


@dataclass(frozen=True)
class ReportConfig:
    timestamp: str | None = None  # None: wall clock at render time
    histogram_columns: tuple[str, ...] | None = None
    histogram_bins: int = DEFAULT_HISTOGRAM_BINS


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    modules: tuple[ModuleConfig, ...]
    clients: tuple[ClientConfig, ...] = ()
    source: SourceConfig | None = None
    partition: PartitionSpec | None = None
    pollution: tuple[PollutionEntry, ...] = ()
    pca: PcaConfig = field(default_factory=PcaConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    output_dir: str = "dr_output"
    global_seed: int = 0
    client_deadline: float = DEFAULT_DEADLINE


def _require(cond: bool, path: str, reason: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {reason}")


def _as_mapping(value: Any, path: str) -> dict:
    _require(isinstance(value, dict), path, f"expected a mapping, got {type(value).__name__}")
    return value


def _parse_meta(obj: dict, path: str, client_id: str = "client") -> DatasetMeta:
    obj = dict(obj)
    known = {"label_column", "sensitive_feature", "quasi_identifiers", "positive_label"}
    unknown = set(obj) - known
    _require(not unknown, path, f"unknown meta fields {sorted(unknown)}")
    qi = obj.get("quasi_identifiers") or ()
    _require(isinstance(qi, (list, tuple)), f"{path}.quasi_identifiers", "expected a list")
    return DatasetMeta(
        client_id=client_id,
        label_column=obj.get("label_column"),
        sensitive_feature=obj.get("sensitive_feature"),
        quasi_identifiers=tuple(qi),
        positive_label=obj.get("positive_label"),
    )


def _parse_synth(obj: dict, path: str) -> SynthSpec:
    obj = _as_mapping(obj, path)
    profile = obj.get("profile", "tabular")
    _require(profile in ("tabular", "image"), f"{path}.profile",
             "expected 'tabular' or 'image'")
    _require("n_rows" in obj, f"{path}.n_rows", "required")
    spec = SynthSpec(
        profile=profile,
        n_rows=int(obj["n_rows"]),
        n_features=int(obj.get("n_features", 4)),
        n_groups=int(obj.get("n_groups", 2)),
        n_classes=int(obj.get("n_classes", 2)),
        n_pixels=int(obj.get("n_pixels", 16)),
    )
    _require(spec.n_rows >= 1, f"{path}.n_rows", "must be >= 1")
    return spec


def _parse_pollution_list(items: Any, path: str) -> tuple[PollutionEntry, ...]:
    if items is None:
        return ()
    _require(isinstance(items, list), path, "expected a list")
    out = []
    for i, raw in enumerate(items):
        p = f"{path}[{i}]"
        raw = dict(_as_mapping(raw, p))
        kind = raw.pop("kind", None)
        _require(kind in _POLLUTION_KINDS, f"{p}.kind",
                 f"expected one of {sorted(_POLLUTION_KINDS)}, got {kind!r}")
        seed = raw.pop("rng_seed", None)
        out.append(PollutionEntry(kind, raw, None if seed is None else int(seed)))
    return tuple(out)


def _parse_client(obj: dict, path: str) -> ClientConfig:
    obj = _as_mapping(obj, path)
    _require("client_id" in obj, f"{path}.client_id", "required")
    cid = str(obj["client_id"])
    data = obj.get("data")
    synth = obj.get("synth")
    _require((data is None) != (synth is None), path,
             "exactly one of 'data' or 'synth' is required")
    meta = None
    if "meta" in obj and obj["meta"] is not None:
        meta = _parse_meta(_as_mapping(obj["meta"], f"{path}.meta"), f"{path}.meta", cid)
        if _meta_to_raw(meta) is None:
            meta = None
    return ClientConfig(
        client_id=cid,
        data=str(data) if data is not None else None,
        format=obj.get("format"),
        synth=_parse_synth(synth, f"{path}.synth") if synth is not None else None,
        meta=meta,
        pollution=_parse_pollution_list(obj.get("pollution"), f"{path}.pollution"),
    )


def _parse_module(obj: dict, path: str, registry: ModuleRegistry) -> ModuleConfig:
    obj = _as_mapping(obj, path)
    _require("name" in obj, f"{path}.name", "required")
    name = str(obj["name"])
    _require(name in registry.ctors, f"{path}.name",
             f"unknown module {name!r}; registered: {sorted(registry.ctors)}")
    rule = obj.get("rule")
    if rule is not None:
        try:
            parse_rule(str(rule))
        except Exception as exc:
            raise ConfigError(f"{path}.rule: {exc}") from None
    max_iter = int(obj.get("max_iterations", DEFAULT_MAX_ITERATIONS))
    _require(max_iter >= 1, f"{path}.max_iterations", "must be >= 1")
    return ModuleConfig(
        name=name,
        module_id=str(obj.get("id", name)),
        rule=str(rule) if rule is not None else None,
        metric_args=dict(obj.get("metric_args") or {}),
        remedy_args=dict(obj.get("remedy_args") or {}),
        max_iterations=max_iter,
    )


def _parse_partition(obj: dict, path: str) -> PartitionSpec:
    obj = _as_mapping(obj, path)
    strategy = obj.get("strategy")
    _require(strategy in _PARTITION_STRATEGIES, f"{path}.strategy",
             f"expected one of {sorted(_PARTITION_STRATEGIES)}, got {strategy!r}")
    spec = PartitionSpec(
        strategy=strategy,
        n_clients=int(obj.get("n_clients", 2)),
        alpha=float(obj.get("alpha", 0.5)),
        column=obj.get("column"),
        rng_seed=int(obj["rng_seed"]) if "rng_seed" in obj and obj["rng_seed"] is not None else 0,
    )
    if strategy == "dirichlet_label_skew":
        _require(spec.n_clients >= 2, f"{path}.n_clients", "must be >= 2")
        _require(spec.alpha > 0, f"{path}.alpha", "must be > 0")
    else:
        _require(spec.column is not None, f"{path}.column", "required")
    return spec


def build_config(raw: dict, base_dir: str | Path = ".",
                 registry: ModuleRegistry | None = None) -> ExperimentConfig:
    """Validate a raw mapping (already loaded YAML) into an ExperimentConfig."""
    registry = registry or builtin_registry()
    raw = _as_mapping(raw, "<config>")
    _require("experiment_id" in raw, "experiment_id", "required")

    modules_raw = raw.get("readiness_modules")
    _require(isinstance(modules_raw, list) and modules_raw, "readiness_modules",
             "at least one module is required")
    modules = tuple(_parse_module(m, f"readiness_modules[{i}]", registry)
                    for i, m in enumerate(modules_raw))
    ids = [m.module_id for m in modules]
    _require(len(set(ids)) == len(ids), "readiness_modules", "module ids must be unique")

    partition_spec = None
    if raw.get("partition") is not None:
        partition_spec = _parse_partition(raw["partition"], "partition")
    source = None
    if raw.get("source") is not None:
        s = _as_mapping(raw["source"], "source")
        data, synth = s.get("data"), s.get("synth")
        _require((data is None) != (synth is None), "source",
                 "exactly one of 'data' or 'synth' is required")
        source = SourceConfig(
            data=str(data) if data is not None else None,
            format=s.get("format"),
            synth=_parse_synth(synth, "source.synth") if synth is not None else None,
            meta=_parse_meta(_as_mapping(s["meta"], "source.meta"), "source.meta")
            if s.get("meta") is not None else None,
        )

    clients_raw = raw.get("clients")
    if partition_spec is not None:
        _require(clients_raw is None, "clients",
                 "'clients' and 'partition' are mutually exclusive")
        _require(source is not None, "source", "required when 'partition' is set")
        clients: tuple[ClientConfig, ...] = ()
    else:
        _require(isinstance(clients_raw, list) and clients_raw, "clients",
                 "at least one client is required")
        clients = tuple(_parse_client(c, f"clients[{i}]")
                        for i, c in enumerate(clients_raw))
        cids = [c.client_id for c in clients]
        _require(len(set(cids)) == len(cids), "clients", "client ids must be unique")

    seeds = _as_mapping(raw.get("seeds", {"global": 0}), "seeds")
    deadlines = _as_mapping(raw.get("deadlines", {}), "deadlines")
    deadline = float(deadlines.get("client_seconds", DEFAULT_DEADLINE))
    _require(deadline > 0, "deadlines.client_seconds", "must be > 0")

    pca_raw = _as_mapping(raw.get("pca", {}), "pca")
    feature_cols = pca_raw.get("feature_columns")
    if feature_cols is not None:
        _require(isinstance(feature_cols, list) and feature_cols,
                 "pca.feature_columns", "expected a non-empty list or null")
    sample_size = int(pca_raw.get("sample_size", DEFAULT_SAMPLE_SIZE))
    _require(sample_size >= 1, "pca.sample_size", "must be >= 1")

    report_raw = _as_mapping(raw.get("report", {}), "report")
    hist_cols = report_raw.get("histogram_columns")
    if hist_cols is not None:
        _require(isinstance(hist_cols, list), "report.histogram_columns",
                 "expected a list or null")
    bins = int(report_raw.get("histogram_bins", DEFAULT_HISTOGRAM_BINS))
    _require(bins >= 1, "report.histogram_bins", "must be >= 1")

    output_dir = os.environ.get(OUTPUT_DIR_ENV) or raw.get("output_dir", "dr_output")

    base = Path(base_dir)

    def _resolve(p: str | None) -> str | None:
        if p is None:
            return None
        path = Path(p)
        return str(path if path.is_absolute() else (base / path).resolve())

    clients = tuple(replace(c, data=_resolve(c.data)) for c in clients)
    if source is not None:
        source = replace(source, data=_resolve(source.data))

    return ExperimentConfig(
        experiment_id=str(raw["experiment_id"]),
        modules=modules,
        clients=clients,
        source=source,
        partition=partition_spec,
        pollution=_parse_pollution_list(raw.get("pollution"), "pollution"),
        pca=PcaConfig(tuple(feature_cols) if feature_cols is not None else None, sample_size),
        report=ReportConfig(
            timestamp=report_raw.get("timestamp"),
            histogram_columns=tuple(hist_cols) if hist_cols is not None else None,
            histogram_bins=bins,
        ),
        output_dir=str(output_dir),
        global_seed=int(seeds.get("global", 0)),
        client_deadline=deadline,
    )


def parse_config(path: str | Path, registry: ModuleRegistry | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"<config>: file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"<config>: invalid YAML: {exc}") from None
    if raw is None:
        raise ConfigError("<config>: empty file")
    return build_config(raw, base_dir=path.parent, registry=registry)


def _meta_to_raw(meta: DatasetMeta | None) -> dict | None:
    if meta is None:
        return None
    out: dict[str, Any] = {}
    if meta.label_column is not None:
        out["label_column"] = meta.label_column
    if meta.sensitive_feature is not None:
        out["sensitive_feature"] = meta.sensitive_feature
    if meta.quasi_identifiers:
        out["quasi_identifiers"] = list(meta.quasi_identifiers)
    if meta.positive_label is not None:
        out["positive_label"] = meta.positive_label
    return out or None


def _synth_to_raw(s: SynthSpec) -> dict:
    return {"profile": s.profile, "n_rows": s.n_rows, "n_features": s.n_features,
            "n_groups": s.n_groups, "n_classes": s.n_classes, "n_pixels": s.n_pixels}


def _pollution_to_raw(entries: tuple[PollutionEntry, ...]) -> list[dict] | None:
    if not entries:
        return None
    out = []
    for e in entries:
        d: dict[str, Any] = {"kind": e.kind, **e.params}
        if e.rng_seed is not None:
            d["rng_seed"] = e.rng_seed
        out.append(d)
    return out


def render_config(c: ExperimentConfig) -> str:
    """Canonical YAML emission; round-trips through parse_config."""
    raw: dict[str, Any] = {
        "experiment_id": c.experiment_id,
        "seeds": {"global": c.global_seed},
        "output_dir": c.output_dir,
        "deadlines": {"client_seconds": c.client_deadline},
        "pca": {
            "feature_columns": list(c.pca.feature_columns) if c.pca.feature_columns else None,
            "sample_size": c.pca.sample_size,
        },
        "report": {
            "timestamp": c.report.timestamp,
            "histogram_columns": list(c.report.histogram_columns)
            if c.report.histogram_columns is not None else None,
            "histogram_bins": c.report.histogram_bins,
        },
        "readiness_modules": [
            {
                "name": m.name, "id": m.module_id, "rule": m.rule,
                "metric_args": m.metric_args, "remedy_args": m.remedy_args,
                "max_iterations": m.max_iterations,
            }
            for m in c.modules
        ],
    }
    if c.clients:
        raw["clients"] = []
        for cc in c.clients:
            entry: dict[str, Any] = {"client_id": cc.client_id}
            if cc.data is not None:
                entry["data"] = cc.data
            if cc.format is not None:
                entry["format"] = cc.format
            if cc.synth is not None:
                entry["synth"] = _synth_to_raw(cc.synth)
            meta_raw = _meta_to_raw(cc.meta)
            if meta_raw:
                entry["meta"] = meta_raw
            pol = _pollution_to_raw(cc.pollution)
            if pol:
                entry["pollution"] = pol
            raw["clients"].append(entry)
    if c.source is not None:
        src: dict[str, Any] = {}
        if c.source.data is not None:
            src["data"] = c.source.data
        if c.source.format is not None:
            src["format"] = c.source.format
        if c.source.synth is not None:
            src["synth"] = _synth_to_raw(c.source.synth)
        meta_raw = _meta_to_raw(c.source.meta)
        if meta_raw:
            src["meta"] = meta_raw
        raw["source"] = src
    if c.partition is not None:
        p: dict[str, Any] = {"strategy": c.partition.strategy,
                             "rng_seed": c.partition.rng_seed}
        if c.partition.strategy == "dirichlet_label_skew":
            p["n_clients"] = c.partition.n_clients
            p["alpha"] = c.partition.alpha
        else:
            p["column"] = c.partition.column
        raw["partition"] = p
    pol = _pollution_to_raw(c.pollution)
    if pol:
        raw["pollution"] = pol
    return yaml.safe_dump(raw, sort_keys=True)


# -- deterministic table construction ------------------------------------------

def _build_from_spec(synth: SynthSpec | None, data: str | None, fmt: str | None,
                     meta: DatasetMeta | None, client_id: str, seed: int) -> DataTable:
    if synth is not None:
        if synth.profile == "tabular":
            profile: TabularProfile | ImageLikeProfile = TabularProfile(
                synth.n_rows, synth.n_features, synth.n_groups, synth.n_classes)
        else:
            profile = ImageLikeProfile(synth.n_rows, synth.n_pixels)
        t = synth_table(profile, seed, client_id)
        if meta is not None:
            t = t.with_meta(replace(meta, client_id=client_id))
        return t
    t = load_table(data, fmt, meta or DatasetMeta())  # type: ignore[arg-type]
    return t.with_meta(replace(t.meta, client_id=client_id))


def _apply_pollution(t: DataTable, entries: tuple[PollutionEntry, ...],
                     client_id: str, global_seed: int, offset: int = 0) -> DataTable:
    for j, e in enumerate(entries, start=offset):
        seed = e.rng_seed if e.rng_seed is not None else derive_seed(
            global_seed, f"pollute:{client_id}:{j}")
        t = pollute(t, PollutionSpec(e.kind, e.params, seed))
    return t


def build_client_tables(config: ExperimentConfig) -> list[DataTable]:
    """Materialize every client's table: synth/load, partition, pollution.
    Deterministic in the config alone; used identically by the in-process
    harness and the networked client command."""
    tables: list[DataTable] = []
    if config.partition is not None:
        src_cfg = config.source
        assert src_cfg is not None
        src = _build_from_spec(src_cfg.synth, src_cfg.data, src_cfg.format,
                               src_cfg.meta, "client",
                               derive_seed(config.global_seed, "source"))
        spec = config.partition
        if spec.rng_seed == 0:
            spec = replace(spec, rng_seed=derive_seed(config.global_seed, "partition"))
        tables = partition(src, spec)
    else:
        for cc in config.clients:
            seed = derive_seed(config.global_seed, f"synth:{cc.client_id}")
            tables.append(_build_from_spec(cc.synth, cc.data, cc.format, cc.meta,
                                           cc.client_id, seed))
    out = []
    per_client = {cc.client_id: cc.pollution for cc in config.clients}
    for t in tables:
        cid = t.meta.client_id
        t = _apply_pollution(t, config.pollution, cid, config.global_seed)
        extra = per_client.get(cid, ())
        t = _apply_pollution(t, extra, cid, config.global_seed,
                             offset=len(config.pollution))
        out.append(t)
    return out


def build_client_table(config: ExperimentConfig, client_id: str) -> DataTable:
    """The one client's table (for the networked ``client`` subcommand)."""
    for t in build_client_tables(config):
        if t.meta.client_id == client_id:
            return t
    raise ConfigError(f"clients: no client named {client_id!r}")


def expected_client_ids(config: ExperimentConfig) -> list[str]:
    """Client ids the server should accept, without building data tables
    unless partitioning makes ids data-dependent."""
    if config.partition is None:
        return [c.client_id for c in config.clients]
    if config.partition.strategy == "dirichlet_label_skew":
        return [f"client_{k}" for k in range(config.partition.n_clients)]
    return [t.meta.client_id for t in build_client_tables(config)]
