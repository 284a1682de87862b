"""Client/server orchestration for the readiness phase.

The server distributes the task configuration, pools the clients' PCA moments
into a global model, collects aggregate-only report payloads and renders the
combined report. Clients run their readiness loops locally; remediated tables
never leave the client.

Per-client phase machine:
    registered -> config_sent -> moments_received -> model_sent
    -> report_received -> done
Out-of-phase frames get an error frame and do not advance state. Stragglers
are dropped at the deadline and marked absent in the report.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .config import (
    ExperimentConfig,
    build_client_table,
    build_client_tables,
    derive_seed,
    expected_client_ids,
)
from .engine import ReadinessOutcome, builtin_registry, run_all_modules
from .errors import BindError, ConnectError, ProtocolError
from .pca import Moments, PcaModel, add_moments, fit_pca, local_moments, project_sample
from .protocol import (
    ACK,
    ChannelConnection,
    Connection,
    ERROR,
    Frame,
    MOMENTS_UP,
    PCA_MODEL_DOWN,
    REGISTER,
    REPORT_UP,
    SHUTDOWN,
    SocketConnection,
    TASK_CONFIG,
)
from .report import DrReport, build_report, write_report
from .remedies import STOCHASTIC_REMEDIES
from .table import DataTable, DatasetMeta, load_table

_PHASES = ("registered", "config_sent", "moments_received", "model_sent",
           "report_received", "done")


def _error(code: str, message: str) -> Frame:
    return Frame(ERROR, {"code": code, "message": message})


def build_task_body(config: ExperimentConfig) -> dict[str, Any]:
    """The task_config frame body: modules with resolved seeds, PCA and report
    settings. Identical for every client and every transport."""
    reg = builtin_registry()
    modules = []
    for m in config.modules:
        remedy_args = dict(m.remedy_args)
        built = reg.construct(m.name, m.module_id, m.rule, m.metric_args,
                              remedy_args, m.max_iterations)
        if built.remedy.kind in STOCHASTIC_REMEDIES and "rng_seed" not in remedy_args:
            remedy_args["rng_seed"] = derive_seed(
                config.global_seed, f"remedy:{m.module_id}")
        modules.append({
            "name": m.name,
            "module_id": m.module_id,
            "rule": m.rule,
            "metric_args": m.metric_args,
            "remedy_args": remedy_args,
            "max_iterations": m.max_iterations,
        })
    return {
        "experiment_id": config.experiment_id,
        "modules": modules,
        "pca": {
            "feature_columns": list(config.pca.feature_columns)
            if config.pca.feature_columns is not None else None,
            "sample_size": config.pca.sample_size,
        },
        "report": {
            "histogram_columns": list(config.report.histogram_columns)
            if config.report.histogram_columns is not None else None,
            "histogram_bins": config.report.histogram_bins,
        },
        "seeds": {"global": config.global_seed},
    }


@dataclass
class AggregatedRun:
    """Everything the server ends a run with."""

    experiment_id: str
    report: DrReport
    payloads: dict[str, dict[str, Any]]
    absent: list[str]
    model: PcaModel | None
    report_paths: tuple[str, str] | None = None
    events: list[dict[str, Any]] = field(default_factory=list)


class Coordinator:
    """Shared session state for one run, safe for concurrent handlers."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.expected = list(dict.fromkeys(expected_client_ids(config)))
        self.task_body = build_task_body(config)
        self.deadline = time.monotonic() + config.client_deadline
        self.cv = threading.Condition()
        self.phases: dict[str, str] = {}
        self.moments: dict[str, Moments] = {}
        self.payloads: dict[str, dict[str, Any]] = {}
        self.aborted: set[str] = set()
        self.model: PcaModel | None = None
        self._model_fitted = False
        self.events: list[dict[str, Any]] = []

    # -- bookkeeping ------------------------------------------------------

    def log(self, event: str, **fields: Any) -> None:
        with self.cv:
            self.events.append(
                {"ts": datetime.now(timezone.utc).isoformat(), "event": event, **fields})

    def remaining(self) -> float:
        return max(0.05, self.deadline - time.monotonic())

    def register(self, client_id: str) -> Frame | None:
        """None on success, or the error frame to send."""
        with self.cv:
            if client_id not in self.expected:
                return _error("unknown_client", f"client {client_id!r} is not configured")
            if client_id in self.phases:
                return _error("already_registered", f"client {client_id!r} already registered")
            self.phases[client_id] = "registered"
            self.cv.notify_all()
        self.log("register", client=client_id)
        return None

    def set_phase(self, client_id: str, phase: str) -> None:
        with self.cv:
            self.phases[client_id] = phase
            self.cv.notify_all()

    def abort(self, client_id: str | None) -> None:
        if client_id is None:
            return
        with self.cv:
            self.aborted.add(client_id)
            self.cv.notify_all()
        self.log("client_aborted", client=client_id)

    # -- aggregation points -------------------------------------------------

    def submit_moments(self, client_id: str, moments: Moments) -> Frame | None:
        with self.cv:
            reference = next(iter(self.moments.values()), None)
            if reference is not None and reference.feature_columns != moments.feature_columns:
                return _error("moments_mismatch",
                              "feature columns differ from other clients")
            self.moments[client_id] = moments
            self.phases[client_id] = "moments_received"
            self.cv.notify_all()
        self.log("moments_received", client=client_id, count=moments.count)
        return None

    def await_model(self) -> PcaModel | None:
        """Block until every expected client has reported moments or dropped
        out, or the deadline passes; then fit the global model exactly once
        (summing in sorted-client order for cross-transport determinism)."""
        def settled() -> bool:
            return all(c in self.moments or c in self.aborted for c in self.expected)

        with self.cv:
            while not self._model_fitted:
                if settled() or time.monotonic() >= self.deadline:
                    pooled = None
                    for cid in sorted(self.moments):
                        pooled = (self.moments[cid] if pooled is None
                                  else add_moments(pooled, self.moments[cid]))
                    if pooled is not None and pooled.count >= 2:
                        try:
                            self.model = fit_pca(pooled)
                        except Exception:
                            self.model = None
                    self._model_fitted = True
                    self.cv.notify_all()
                    break
                self.cv.wait(timeout=min(0.1, self.remaining()))
        if self.model is not None:
            self.log("model_broadcast", components=len(self.model.components))
        return self.model

    def submit_payload(self, client_id: str, payload: dict[str, Any]) -> Frame | None:
        if not isinstance(payload, dict) or payload.get("client_id") != client_id:
            return _error("bad_payload", "payload client_id mismatch")
        with self.cv:
            self.payloads[client_id] = payload
            self.phases[client_id] = "report_received"
            self.cv.notify_all()
        self.log("report_received", client=client_id)
        return None

    # -- completion ---------------------------------------------------------

    def wait_complete(self) -> None:
        def finished() -> bool:
            return all(
                self.phases.get(c) == "done" or c in self.aborted
                for c in self.expected
            )

        with self.cv:
            while not finished() and time.monotonic() < self.deadline:
                self.cv.wait(timeout=min(0.1, self.remaining()))

    def finalize(self, write_files: bool = True) -> AggregatedRun:
        self.wait_complete()
        absent = sorted(c for c in self.expected if c not in self.payloads)
        for c in absent:
            self.log("client_absent", client=c)
        generated_at = self.config.report.timestamp or datetime.now(
            timezone.utc).isoformat(timespec="seconds")
        report = build_report(
            self.config.experiment_id,
            list(self.payloads.values()),
            generated_at,
            absent=absent,
            pca_explained_variance=self.model.explained_variance if self.model else None,
        )
        paths = None
        if write_files:
            paths = write_report(report, self.config.output_dir)
            log_path = Path(self.config.output_dir) / "run.log"
            with open(log_path, "w", encoding="utf-8") as fh:
                for e in self.events:
                    fh.write(json.dumps(e, sort_keys=True) + "\n")
        self.log("run_complete", absent=absent)
        return AggregatedRun(
            experiment_id=self.config.experiment_id,
            report=report,
            payloads=dict(self.payloads),
            absent=absent,
            model=self.model,
            report_paths=paths,
            events=list(self.events),
        )


def _recv_expected(coord: Coordinator, conn: Connection, client_id: str | None,
                   expected_type: str) -> Frame | None:
    """Read frames until one of the expected type arrives; out-of-phase frames
    are answered with an error and do not advance state. None means the peer
    went away (EOF or deadline)."""
    while True:
        try:
            frame = conn.recv(timeout=coord.remaining())
        except ProtocolError as exc:
            try:
                conn.send(_error("protocol_error", str(exc)))
            except Exception:
                pass
            coord.log("protocol_error", client=client_id, message=str(exc))
            return None
        if frame is None:
            return None
        if frame.type == expected_type:
            return frame
        if frame.type in (SHUTDOWN, ERROR):
            return None
        try:
            conn.send(_error("out_of_phase",
                             f"expected {expected_type}, got {frame.type}"))
        except Exception:
            return None


def handle_connection(coord: Coordinator, conn: Connection) -> None:
    """Drive one client connection through the phase machine. Never raises."""
    client_id: str | None = None
    try:
        while client_id is None:
            frame = _recv_expected(coord, conn, None, REGISTER)
            if frame is None:
                return
            cid = str(frame.body["client_id"])
            err = coord.register(cid)
            if err is not None:
                conn.send(err)
                if err.body["code"] == "unknown_client":
                    return
                continue
            client_id = cid
        conn.send(Frame(TASK_CONFIG, coord.task_body))
        coord.set_phase(client_id, "config_sent")

        while True:
            frame = _recv_expected(coord, conn, client_id, MOMENTS_UP)
            if frame is None:
                coord.abort(client_id)
                return
            try:
                moments = Moments.from_json(frame.body["moments"])
            except (KeyError, TypeError, ValueError):
                conn.send(_error("bad_moments", "unparseable moments body"))
                continue
            err = coord.submit_moments(client_id, moments)
            if err is None:
                break
            conn.send(err)

        model = coord.await_model()
        conn.send(Frame(PCA_MODEL_DOWN,
                        {"model": model.to_json() if model is not None else None}))
        coord.set_phase(client_id, "model_sent")

        while True:
            frame = _recv_expected(coord, conn, client_id, REPORT_UP)
            if frame is None:
                coord.abort(client_id)
                return
            err = coord.submit_payload(client_id, frame.body.get("payload"))
            if err is None:
                break
            conn.send(err)

        conn.send(Frame(ACK, {"message": "payload accepted"}))
        conn.send(Frame(SHUTDOWN))
        coord.set_phase(client_id, "done")
    except Exception as exc:  # connection must never take the server down
        coord.log("handler_error", client=client_id, message=str(exc))
        coord.abort(client_id)
    finally:
        conn.close()


# -- client side ----------------------------------------------------------------

def _auto_feature_columns(t: DataTable) -> list[str]:
    label = t.meta.label_column
    return [c.name for c in t.numeric_columns() if c.name != label]


def client_session(conn: Connection, table: DataTable,
                   deadline: float = 30.0) -> list[ReadinessOutcome]:
    """Run the client half of the protocol over any transport."""
    from .report import build_client_payload

    client_id = table.meta.client_id
    conn.send(Frame(REGISTER, {"client_id": client_id}))
    frame = conn.recv(timeout=deadline)
    if frame is None or frame.type == ERROR:
        detail = frame.body.get("message") if frame else "connection closed"
        raise ProtocolError(f"registration rejected: {detail}")
    if frame.type != TASK_CONFIG:
        raise ProtocolError(f"expected task_config, got {frame.type}")
    plan = frame.body
    reg = builtin_registry()
    modules = [
        reg.construct(m["name"], m["module_id"], m.get("rule"),
                      m.get("metric_args") or {}, m.get("remedy_args") or {},
                      int(m.get("max_iterations", 5)))
        for m in plan["modules"]
    ]
    outcomes = run_all_modules(table, modules)
    after = outcomes[-1].table_after

    feature_cols = plan["pca"].get("feature_columns") or _auto_feature_columns(after)
    moments = local_moments(after, feature_cols)
    conn.send(Frame(MOMENTS_UP, {"client_id": client_id, "moments": moments.to_json()}))
    frame = conn.recv(timeout=deadline)
    if frame is None or frame.type != PCA_MODEL_DOWN:
        raise ProtocolError("did not receive the PCA model")
    model_body = frame.body.get("model")
    pca_points = None
    if model_body is not None:
        model = PcaModel.from_json(model_body)
        pca_points = project_sample(
            after, model,
            sample_size=int(plan["pca"].get("sample_size", 200)),
            rng_seed=derive_seed(int(plan["seeds"]["global"]), f"pca:{client_id}"),
        )
    payload = build_client_payload(
        after, outcomes, pca_points,
        histogram_columns=plan["report"].get("histogram_columns"),
        histogram_bins=int(plan["report"].get("histogram_bins", 20)),
    )
    conn.send(Frame(REPORT_UP, {"client_id": client_id, "payload": payload}))
    frame = conn.recv(timeout=deadline)
    if frame is None or frame.type != ACK:
        raise ProtocolError("payload not acknowledged")
    return outcomes


def run_client(data_path, meta: DatasetMeta, server_addr: tuple[str, int],
               fmt: str | None = None, deadline: float = 30.0) -> list[ReadinessOutcome]:
    """Load a local data file and participate in a readiness run."""
    table = load_table(data_path, fmt, meta)
    return run_client_table(table, server_addr, deadline)


def run_client_table(table: DataTable, server_addr: tuple[str, int],
                     deadline: float = 30.0,
                     wire_tap=None) -> list[ReadinessOutcome]:
    try:
        sock = socket.create_connection(server_addr, timeout=deadline)
    except OSError as exc:
        raise ConnectError(f"cannot reach server at {server_addr}: {exc}") from None
    conn = SocketConnection(sock)
    if wire_tap is not None:
        conn.tap_out = wire_tap
        conn.tap_in = wire_tap
    try:
        return client_session(conn, table, deadline)
    finally:
        conn.close()


# -- server entry points ----------------------------------------------------------

def serve(config: ExperimentConfig, listen_addr: tuple[str, int],
          write_files: bool = True, ready_event: threading.Event | None = None,
          bound_addr: list | None = None) -> AggregatedRun:
    """Accept registrations, coordinate the run, write the report.

    ``ready_event``/``bound_addr`` let a caller learn the bound port (port 0
    supported) before clients connect.
    """
    try:
        listener = socket.create_server(listen_addr)
    except OSError as exc:
        raise BindError(f"cannot bind {listen_addr}: {exc}") from None
    listener.settimeout(0.1)
    if bound_addr is not None:
        bound_addr.append(listener.getsockname())
    coord = Coordinator(config)
    coord.log("serve_start", addr=list(listener.getsockname()))
    if ready_event is not None:
        ready_event.set()

    handlers: list[threading.Thread] = []
    stop = threading.Event()

    def accept_loop() -> None:
        while not stop.is_set():
            try:
                sock, _peer = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            th = threading.Thread(target=handle_connection,
                                  args=(coord, SocketConnection(sock)), daemon=True)
            th.start()
            handlers.append(th)

    acceptor = threading.Thread(target=accept_loop, daemon=True)
    acceptor.start()
    try:
        run = coord.finalize(write_files=write_files)
    finally:
        stop.set()
        try:
            listener.close()
        except OSError:
            pass
        acceptor.join(timeout=2.0)
    return run


def run_in_process(config: ExperimentConfig, write_files: bool = True,
                   wire_tap=None) -> AggregatedRun:
    """Same semantics as serve + clients over in-memory channels; byte
    identical report given identical seeds and an injected timestamp."""
    tables = build_client_tables(config)
    coord = Coordinator(config)
    threads: list[threading.Thread] = []
    client_errors: list[tuple[str, Exception]] = []
    for table in tables:
        server_conn, client_conn = ChannelConnection.pair()
        if wire_tap is not None:
            client_conn.tap_out = wire_tap
            client_conn.tap_in = wire_tap

        def client_main(conn=client_conn, t=table) -> None:
            try:
                client_session(conn, t, deadline=config.client_deadline)
            except Exception as exc:
                client_errors.append((t.meta.client_id, exc))
            finally:
                conn.close()

        threads.append(threading.Thread(
            target=handle_connection, args=(coord, server_conn), daemon=True))
        threads.append(threading.Thread(target=client_main, daemon=True))
    for th in threads:
        th.start()
    run = coord.finalize(write_files=write_files)
    for th in threads:
        th.join(timeout=2.0)
    for cid, exc in client_errors:
        coord.log("client_error", client=cid, message=str(exc))
    return run


def run_networked(config: ExperimentConfig, host: str = "127.0.0.1", port: int = 0,
                  write_files: bool = True, wire_tap=None) -> AggregatedRun:
    """Full socket run with all clients in this process (test/demo harness)."""
    ready = threading.Event()
    bound: list = []
    result: list[AggregatedRun] = []

    def server_main() -> None:
        result.append(serve(config, (host, port), write_files=write_files,
                            ready_event=ready, bound_addr=bound))

    server_thread = threading.Thread(target=server_main, daemon=True)
    server_thread.start()
    if not ready.wait(timeout=10.0):
        raise BindError("server did not start")
    addr = bound[0]
    tables = build_client_tables(config)
    client_threads = [
        threading.Thread(target=run_client_table,
                         args=(t, (addr[0], addr[1]), config.client_deadline, wire_tap),
                         daemon=True)
        for t in tables
    ]
    for th in client_threads:
        th.start()
    server_thread.join(timeout=config.client_deadline + 15.0)
    for th in client_threads:
        th.join(timeout=2.0)
    if not result:
        raise ProtocolError("server did not finish")
    return result[0]


def client_main_from_config(config: ExperimentConfig, client_id: str,
                            server_addr: tuple[str, int]) -> list[ReadinessOutcome]:
    """Networked client driven by the shared experiment config (synth data,
    partition shares and pollution are reproduced locally)."""
    table = build_client_table(config, client_id)
    return run_client_table(table, server_addr, deadline=config.client_deadline)
