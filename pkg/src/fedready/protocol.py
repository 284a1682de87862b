"""Newline-delimited JSON wire protocol.

One frame per line: ``{"type": ..., "protocol_version": 1, "body": {...}}``.
Frames above 16 MiB are rejected. No frame type carries raw table rows; the
largest payloads are O(d^2) moment matrices and bounded report aggregates.
"""

from __future__ import annotations

import json
import queue
import socket
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ProtocolError

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024

REGISTER = "register"
TASK_CONFIG = "task_config"
MOMENTS_UP = "moments_up"
PCA_MODEL_DOWN = "pca_model_down"
REPORT_UP = "report_up"
ACK = "ack"
ERROR = "error"
SHUTDOWN = "shutdown"

# required body keys per frame type
_FRAME_SCHEMAS: dict[str, tuple[str, ...]] = {
    REGISTER: ("client_id",),
    TASK_CONFIG: ("experiment_id", "modules", "pca", "report"),
    MOMENTS_UP: ("client_id", "moments"),
    PCA_MODEL_DOWN: ("model",),
    REPORT_UP: ("client_id", "payload"),
    ACK: (),
    ERROR: ("code", "message"),
    SHUTDOWN: (),
}


@dataclass(frozen=True)
class Frame:
    type: str
    body: dict[str, Any] = field(default_factory=dict)
    protocol_version: int = PROTOCOL_VERSION

    def encode(self) -> bytes:
        line = json.dumps(
            {"type": self.type, "protocol_version": self.protocol_version,
             "body": self.body},
            sort_keys=True,
        )
        data = line.encode("utf-8") + b"\n"
        if len(data) > MAX_FRAME_BYTES:
            raise ProtocolError(f"frame of {len(data)} bytes exceeds limit")
        return data


def decode_frame(line: bytes) -> Frame:
    """Parse and validate one wire line."""
    if len(line) > MAX_FRAME_BYTES:
        raise ProtocolError("oversized frame")
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("frame is not an object")
    ftype = obj.get("type")
    if ftype not in _FRAME_SCHEMAS:
        raise ProtocolError(f"unknown frame type {ftype!r}")
    version = obj.get("protocol_version")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version!r}")
    body = obj.get("body")
    if not isinstance(body, dict):
        raise ProtocolError("frame body must be an object")
    missing = [k for k in _FRAME_SCHEMAS[ftype] if k not in body]
    if missing:
        raise ProtocolError(f"{ftype} frame missing body keys: {missing}")
    return Frame(ftype, body, version)


class Connection:
    """Bidirectional frame stream; subclasses provide the byte transport.

    ``tap_out``/``tap_in`` observe raw wire bytes (used by the leak-scan
    tests); they never alter behavior.
    """

    tap_out: Callable[[bytes], None] | None = None
    tap_in: Callable[[bytes], None] | None = None

    def send(self, frame: Frame) -> None:
        data = frame.encode()
        if self.tap_out:
            self.tap_out(data)
        self._write(data)

    def recv(self, timeout: float | None = None) -> Frame | None:
        """Next frame, or None on EOF. Raises ProtocolError on bad data."""
        line = self._read_line(timeout)
        if line is None:
            return None
        if self.tap_in:
            self.tap_in(line)
        return decode_frame(line)

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def _read_line(self, timeout: float | None) -> bytes | None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class SocketConnection(Connection):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = sock.makefile("rb")

    def _write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def _read_line(self, timeout: float | None) -> bytes | None:
        self._sock.settimeout(timeout)
        try:
            line = self._reader.readline(MAX_FRAME_BYTES + 2)
        except (socket.timeout, TimeoutError):
            raise ProtocolError("read timed out") from None
        except OSError:
            return None
        if not line:
            return None
        if not line.endswith(b"\n"):
            # either EOF without a trailing newline (tolerated) or a line
            # longer than the frame limit (rejected)
            if len(line) > MAX_FRAME_BYTES:
                raise ProtocolError("oversized frame")
        return line

    def close(self) -> None:
        try:
            self._reader.close()
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class ChannelConnection(Connection):
    """In-memory transport with identical framing (bytes through queues)."""

    def __init__(self, inbox: "queue.Queue[bytes | None]",
                 outbox: "queue.Queue[bytes | None]"):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @staticmethod
    def pair() -> tuple["ChannelConnection", "ChannelConnection"]:
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        return (ChannelConnection(b_to_a, a_to_b),
                ChannelConnection(a_to_b, b_to_a))

    def _write(self, data: bytes) -> None:
        if not self._closed:
            self._outbox.put(data)

    def _read_line(self, timeout: float | None) -> bytes | None:
        try:
            data = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError("read timed out") from None
        return data

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(None)
