"""Client for remote detection-score oracles.

Wire protocol: newline-delimited JSON over TCP. The client opens with
{"type": "hello", "version": 1} and expects {"type": "capabilities",
"version": 1, "max_parallel": k}. Each scoring request is

    {"type": "evaluate", "id": <u64>, "texture_png_b64": <str>,
     "transforms": [{"distance_m": <float>, "azimuth_deg": <float>}, ...]}

answered by {"type": "result", "id": ..., "scores": [...]} or
{"type": "error", "id": ..., "message": ...}. Responses may arrive out
of order; a reader thread matches them to requests by id. Unknown fields
are ignored; unknown message types are protocol violations.

Failures surface as distinct exception types so the search engine can
tell a flaky connection (retryable) from a broken peer (not).
"""

from __future__ import annotations

import base64
import itertools
import json
import socket
import threading

from .oracles import DetectionOracle, OracleQuery, OracleResponse
from .textures import png_bytes

PROTOCOL_VERSION = 1
WIRE_PNG_COMPRESS_LEVEL = 1  # textures are mosaics; speed beats ratio on the wire


class RemoteOracleError(RuntimeError):
    retryable = False


class RemoteConnectionError(RemoteOracleError):
    retryable = True


class RemoteTimeoutError(RemoteOracleError):
    retryable = True


class RemoteProtocolError(RemoteOracleError):
    retryable = False


class RemoteEvaluationError(RemoteOracleError):
    """The server answered this query with an error message."""

    retryable = False


def encode_message(message: dict) -> bytes:
    return (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")


def transforms_to_wire(transforms) -> list[dict]:
    return [{"distance_m": t.distance_m, "azimuth_deg": t.azimuth_deg} for t in transforms]


class _Slot:
    __slots__ = ("event", "message")

    def __init__(self):
        self.event = threading.Event()
        self.message = None


class RemoteOracle(DetectionOracle):
    """Blocking evaluate() over a multiplexed connection.

    Safe to call from as many threads as the server's advertised
    ``max_parallel``; additional callers queue on a semaphore.
    """

    def __init__(self, address: str, *, connect_timeout: float = 10.0,
                 request_timeout: float = 300.0):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"remote address must be HOST:PORT, got {address!r}")
        self.address = address
        self.request_timeout = request_timeout
        self._ids = itertools.count(1)
        self._pending: dict[int, _Slot] = {}
        self._lock = threading.Lock()
        self._dead: Exception | None = None

        try:
            self._sock = socket.create_connection((host, int(port)), timeout=connect_timeout)
        except OSError as exc:
            raise RemoteConnectionError(f"cannot connect to {address}: {exc}") from exc
        self._reader_file = self._sock.makefile("rb")
        try:
            self._send({"type": "hello", "version": PROTOCOL_VERSION})
            caps = self._read_handshake(connect_timeout)
        except Exception:
            self._sock.close()
            raise
        self.max_parallel = max(1, int(caps.get("max_parallel", 1)))
        self._capacity = threading.BoundedSemaphore(self.max_parallel)
        self._sock.settimeout(None)
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="remote-oracle-reader")
        self._reader.start()

    # -- transport ------------------------------------------------------------

    def _send(self, message: dict) -> None:
        data = encode_message(message)
        try:
            with self._lock:
                self._sock.sendall(data)
        except OSError as exc:
            raise RemoteConnectionError(f"send failed: {exc}") from exc

    def _read_handshake(self, timeout: float) -> dict:
        self._sock.settimeout(timeout)
        try:
            line = self._reader_file.readline()
        except (OSError, socket.timeout) as exc:
            raise RemoteConnectionError(f"handshake read failed: {exc}") from exc
        if not line:
            raise RemoteConnectionError("server closed the connection during handshake")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RemoteProtocolError(f"handshake is not valid JSON: {line!r}") from exc
        if message.get("type") != "capabilities":
            raise RemoteProtocolError(f"expected capabilities, got {message.get('type')!r}")
        if message.get("version") != PROTOCOL_VERSION:
            raise RemoteProtocolError(f"unsupported protocol version {message.get('version')!r}")
        return message

    def _read_loop(self) -> None:
        try:
            for line in self._reader_file:
                message = json.loads(line)
                kind = message.get("type")
                if kind in ("result", "error"):
                    self._resolve(message)
                else:
                    raise RemoteProtocolError(f"unexpected message type {kind!r}")
            raise RemoteConnectionError("server closed the connection")
        except RemoteOracleError as exc:
            self._fail_all(exc)
        except json.JSONDecodeError as exc:
            self._fail_all(RemoteProtocolError(f"bad JSON from server: {exc}"))
        except OSError as exc:
            self._fail_all(RemoteConnectionError(f"read failed: {exc}"))

    def _resolve(self, message: dict) -> None:
        with self._lock:
            slot = self._pending.pop(int(message.get("id", -1)), None)
        if slot is not None:  # unknown ids are tolerated (e.g. timed-out requests)
            slot.message = message
            slot.event.set()

    def _fail_all(self, exc: Exception) -> None:
        with self._lock:
            self._dead = exc
            pending = list(self._pending.values())
            self._pending.clear()
        for slot in pending:
            slot.event.set()

    # -- oracle interface -------------------------------------------------------

    def evaluate(self, query: OracleQuery) -> OracleResponse:
        if self._dead is not None:
            raise self._dead
        texture = query.build_texture()
        payload = base64.b64encode(
            png_bytes(texture, compress_level=WIRE_PNG_COMPRESS_LEVEL)
        ).decode("ascii")
        request_id = next(self._ids)
        slot = _Slot()
        with self._lock:
            self._pending[request_id] = slot

        with self._capacity:
            self._send({
                "type": "evaluate",
                "id": request_id,
                "texture_png_b64": payload,
                "transforms": transforms_to_wire(query.transforms),
            })
            if not slot.event.wait(self.request_timeout):
                with self._lock:
                    self._pending.pop(request_id, None)
                raise RemoteTimeoutError(
                    f"no reply to query {request_id} within {self.request_timeout}s"
                )

        if slot.message is None:
            raise self._dead or RemoteConnectionError("connection lost")
        message = slot.message
        if message["type"] == "error":
            raise RemoteEvaluationError(str(message.get("message", "unspecified error")))
        scores = message.get("scores")
        if not isinstance(scores, list) or len(scores) != len(query.transforms):
            raise RemoteProtocolError(
                f"result carries {len(scores) if isinstance(scores, list) else 'no'} "
                f"scores for {len(query.transforms)} transforms"
            )
        return OracleResponse(scores=tuple(float(s) for s in scores))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
