"""Deterministic reference retrieval server for exercising the harness.

The server knows the ground truth and answers queries with a scripted
oracle, so the expected score of every run is known in advance.
"""

from __future__ import annotations

import enum
import logging
import random
import threading
import time
from dataclasses import dataclass
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from . import protocol
from .groundtruth import GroundTruthFile

log = logging.getLogger(__name__)


class OracleKind(enum.Enum):
    PERFECT = "perfect"
    EMPTY = "empty"
    REVERSED = "reversed"
    NOISY = "noisy"
    DELAYED = "delayed"


@dataclass(frozen=True)
class OracleMode:
    kind: OracleKind = OracleKind.PERFECT
    swap_rate: Fraction = Fraction(0)
    seed: int = 0
    delay: float = 0.0  # seconds
    base: OracleMode | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "swap_rate", Fraction(self.swap_rate))
        if not 0 <= self.swap_rate <= 1:
            raise ValueError(f"swap rate must lie in [0, 1], got {self.swap_rate}")
        if self.kind is OracleKind.DELAYED:
            if self.base is None or self.delay < 0:
                raise ValueError("delayed mode needs a base mode and a non-negative delay")

    @classmethod
    def noisy(cls, swap_rate: Fraction | float | str, seed: int) -> OracleMode:
        return cls(OracleKind.NOISY, swap_rate=Fraction(swap_rate), seed=seed)

    @classmethod
    def delayed(cls, base: OracleMode, delay: float) -> OracleMode:
        return cls(OracleKind.DELAYED, delay=delay, base=base)

    @classmethod
    def parse(cls, text: str) -> OracleMode:
        """``perfect``, ``empty``, ``reversed``, ``noisy:<rate>,<seed>``,
        ``delayed:<ms>:<base-mode>``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            if name == "noisy":
                rate, seed = arg.split(",")
                return cls.noisy(Fraction(rate), int(seed))
            if name == "delayed":
                ms, base = arg.split(":", 1)
                return cls.delayed(cls.parse(base), float(ms) / 1000)
            kind = OracleKind(name)
        except ValueError as exc:
            raise ValueError(f"bad oracle mode {text!r}") from exc
        if arg:
            raise ValueError(f"bad oracle mode {text!r}")
        return cls(kind)

    def answer_mode(self) -> OracleMode:
        mode = self
        while mode.kind is OracleKind.DELAYED:
            mode = mode.base  # type: ignore[assignment]
        return mode

    def total_delay(self) -> float:
        total, mode = 0.0, self
        while mode.kind is OracleKind.DELAYED:
            total += mode.delay
            mode = mode.base  # type: ignore[assignment]
        return total

    def __str__(self) -> str:
        if self.kind is OracleKind.NOISY:
            return f"noisy:{self.swap_rate},{self.seed}"
        if self.kind is OracleKind.DELAYED:
            return f"delayed:{self.delay * 1000:g}:{self.base}"
        return self.kind.value


class Oracle:
    """Precomputed lookups for answering queries against one ground truth."""

    def __init__(self, gt: GroundTruthFile, include_self: bool = True):
        self.vectors = gt.vectors(include_self=include_self)
        self.collection = sorted(gt.images())

    def perfect(self, query_id: str, n: int) -> list[str]:
        vector = self.vectors[query_id]
        members = set(vector.members)
        ranked = [query_id] if query_id in members else []
        ranked += [m for m in vector.members if m != query_id]
        for image_id in self.collection:
            if len(ranked) >= n:
                break
            if image_id not in members:
                ranked.append(image_id)
        return ranked[:n]

    def answer(self, query_id: str, n: int, mode: OracleMode) -> list[str]:
        if query_id not in self.vectors:
            raise KeyError(query_id)
        mode = mode.answer_mode()
        if mode.kind is OracleKind.EMPTY:
            return []
        ranked = self.perfect(query_id, n)
        if mode.kind is OracleKind.REVERSED:
            ranked.reverse()
        elif mode.kind is OracleKind.NOISY:
            _adjacent_swaps(ranked, mode.swap_rate, random.Random(f"{mode.seed}:{query_id}"))
        return ranked


def _adjacent_swaps(items: list[str], rate: Fraction, rng: random.Random) -> None:
    # one left-to-right pass; a draw is consumed at every position so that
    # lower rates swap a subset of the positions higher rates swap
    for i in range(len(items) - 1):
        if rng.random() < rate:
            items[i], items[i + 1] = items[i + 1], items[i]


def oracle_answer(
    gt: GroundTruthFile, query_id: str, n: int, mode: OracleMode, include_self: bool = True
) -> list[str]:
    return Oracle(gt, include_self).answer(query_id, n, mode)


class _Handler(BaseHTTPRequestHandler):
    server: _OracleHTTPServer
    protocol_version = "HTTP/1.1"

    def do_GET(self) -> None:
        url = urlsplit(self.path)
        if url.path == protocol.PING_PATH:
            self._reply(200, protocol.PONG)
            return
        if url.path != protocol.QUERY_PATH:
            self._reply(404, protocol.BAD_REQUEST)
            return
        params = parse_qs(url.query)
        try:
            (query_id,) = params["id"]
            (n_text,) = params["n"]
            n = int(n_text)
            if n < 1:
                raise ValueError
        except (KeyError, ValueError):
            self._reply(400, protocol.BAD_REQUEST)
            return
        self.server.record(query_id)
        if query_id in self.server.fail_ids:
            self._reply(500, b"ERR injected-fault")
            return
        mode = self.server.mode
        delay = mode.total_delay()
        if delay:
            time.sleep(delay)
        try:
            ids = self.server.oracle.answer(query_id, n, mode)
        except KeyError:
            self._reply(404, protocol.UNKNOWN_ID)
            return
        self._reply(200, protocol.encode_answer(ids))

    def _reply(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "text/plain; charset=us-ascii")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, format: str, *args: object) -> None:
        log.debug("%s - %s", self.address_string(), format % args)


class _OracleHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128

    def __init__(
        self,
        address: tuple[str, int],
        oracle: Oracle,
        mode: OracleMode,
        fail_ids: frozenset[str] = frozenset(),
    ):
        self.oracle = oracle
        self.mode = mode
        self.fail_ids = fail_ids
        self.requests: list[str] = []
        self._lock = threading.Lock()
        super().__init__(address, _Handler)

    def record(self, query_id: str) -> None:
        with self._lock:
            self.requests.append(query_id)


class MockServer:
    """Running oracle server; use as a context manager or call :meth:`close`."""

    def __init__(self, httpd: _OracleHTTPServer):
        self._httpd = httpd
        self._thread = threading.Thread(target=httpd.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()

    @property
    def host(self) -> str:
        return self._httpd.server_address[0]

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def requests(self) -> list[str]:
        """Query ids received so far, in arrival order."""
        with self._httpd._lock:
            return list(self._httpd.requests)

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join()

    def __enter__(self) -> MockServer:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def serve(
    gt: GroundTruthFile,
    mode: OracleMode = OracleMode(),
    bind: str = "127.0.0.1:0",
    include_self: bool = True,
    fail_ids: frozenset[str] = frozenset(),
) -> MockServer:
    """Start the oracle server in a background thread; port 0 picks a free port.

    Queries listed in ``fail_ids`` get a 500 response (fault injection).
    """
    httpd = _OracleHTTPServer(
        protocol.parse_endpoint(bind), Oracle(gt, include_self), mode, frozenset(fail_ids)
    )
    return MockServer(httpd)
