"""Drive a benchmark run against a retrieval server.

Every ground-truth query is sent once, its response time is measured on
the monotonic clock, and the ranked identifiers it returns are scored
after all responses are in.  A query that fails for any reason is scored
as a total miss and counted separately.
"""

from __future__ import annotations

import enum
import http.client
import itertools
import logging
import math
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from urllib.parse import urlencode

from . import protocol
from .groundtruth import GroundTruthFile, load_ground_truth
from .scoring import (
    BenchmarkScore,
    PenaltyPolicy,
    RetrievedList,
    score_benchmark,
    score_query,
    worst_case_score,
)
from .window import WindowSpec, require_scorable, select_window

log = logging.getLogger(__name__)

CLOCK = "perf_counter"


class StartupError(RuntimeError):
    """The run could not begin (ground truth unreadable, server unreachable)."""


class Outcome(enum.Enum):
    OK = "OK"
    TIMEOUT = "TIMEOUT"
    PROTOCOL_ERROR = "PROTOCOL_ERROR"
    TRANSPORT_ERROR = "TRANSPORT_ERROR"


class QueryFailure(Exception):
    outcome = Outcome.TRANSPORT_ERROR


class QueryTimeout(QueryFailure):
    outcome = Outcome.TIMEOUT


class ProtocolError(QueryFailure):
    outcome = Outcome.PROTOCOL_ERROR


class TransportError(QueryFailure):
    outcome = Outcome.TRANSPORT_ERROR


@dataclass(frozen=True)
class RunConfig:
    server_endpoint: str
    gt_path: str | None = None
    window: WindowSpec = field(default_factory=WindowSpec.convex)
    penalty: PenaltyPolicy = field(default_factory=PenaltyPolicy)
    concurrency: int = 1
    per_query_timeout: float = 30.0
    warmup_queries: int = 0
    shuffle_seed: int | None = None  # None keeps ground-truth order
    allow_nonpositive_window: bool = False
    include_self: bool = True
    literal_nrr: bool = False

    def __post_init__(self) -> None:
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")
        if not self.per_query_timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.per_query_timeout}")
        if self.warmup_queries < 0:
            raise ValueError(f"warmup count must be >= 0, got {self.warmup_queries}")
        protocol.parse_endpoint(self.server_endpoint)

    @property
    def query_order(self) -> str:
        return "gt" if self.shuffle_seed is None else f"shuffled:{self.shuffle_seed}"


@dataclass(frozen=True)
class QueryTiming:
    query_id: str
    outcome: Outcome
    elapsed: float  # seconds until response or failure
    detail: str = ""

    @property
    def response_time(self) -> float | None:
        return self.elapsed if self.outcome is Outcome.OK else None


@dataclass(frozen=True)
class TimingStats:
    count: int
    mean: float
    median: float
    p95: float
    p99: float
    min: float
    max: float


@dataclass
class RunResult:
    config: RunConfig
    gt_version: int
    g_max: int
    score: BenchmarkScore
    timings: list[QueryTiming]
    timing_stats: TimingStats | None
    responses: dict[str, list[str]]
    clock_resolution: float

    @property
    def failures(self) -> int:
        return sum(t.outcome is not Outcome.OK for t in self.timings)


def issue_query(endpoint: str, query_id: str, n: int, timeout: float) -> RetrievedList:
    """Fetch the top ``n`` identifiers for one query.

    Raises :class:`QueryTimeout`, :class:`ProtocolError` or
    :class:`TransportError`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    status, body = _get(endpoint, f"{protocol.QUERY_PATH}?{urlencode({'id': query_id, 'n': n})}", timeout)
    if status == 404:
        raise ProtocolError(body.decode("ascii", "replace").strip() or "404")
    if status != 200:
        raise ProtocolError(f"HTTP status {status}")
    try:
        ids = protocol.decode_answer(body, n)
    except protocol.ProtocolViolation as exc:
        raise ProtocolError(str(exc)) from exc
    return RetrievedList(query_id, tuple(ids))


def ping(endpoint: str, timeout: float) -> None:
    try:
        status, body = _get(endpoint, protocol.PING_PATH, timeout)
    except QueryFailure as exc:
        raise StartupError(f"server {endpoint} unreachable: {exc}") from exc
    if status != 200 or body.strip() != protocol.PONG:
        raise StartupError(f"server {endpoint} failed the handshake (status {status})")


def _get(endpoint: str, path: str, timeout: float) -> tuple[int, bytes]:
    host, port = protocol.parse_endpoint(endpoint)
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        conn.request("GET", path)
        resp = conn.getresponse()
        return resp.status, resp.read()
    except TimeoutError as exc:
        raise QueryTimeout(f"no response within {timeout:g} s") from exc
    except ConnectionError as exc:
        raise TransportError(str(exc) or type(exc).__name__) from exc
    except http.client.HTTPException as exc:
        raise ProtocolError(str(exc) or type(exc).__name__) from exc
    except OSError as exc:
        raise TransportError(str(exc) or type(exc).__name__) from exc
    finally:
        conn.close()


def _timed(endpoint: str, query_id: str, n: int, timeout: float) -> tuple[RetrievedList | None, QueryTiming]:
    start = time.perf_counter()
    try:
        retrieved = issue_query(endpoint, query_id, n, timeout)
    except QueryFailure as exc:
        return None, QueryTiming(query_id, exc.outcome, time.perf_counter() - start, str(exc))
    return retrieved, QueryTiming(query_id, Outcome.OK, time.perf_counter() - start)


def _nearest_rank(ordered: list[float], pct: float) -> float:
    return ordered[max(math.ceil(pct / 100 * len(ordered)), 1) - 1]


def timing_stats(timings: list[QueryTiming]) -> TimingStats | None:
    """Summary over successful queries; None when there are none."""
    ok = sorted(t.elapsed for t in timings if t.outcome is Outcome.OK)
    if not ok:
        return None
    return TimingStats(
        count=len(ok),
        mean=statistics.fmean(ok),
        median=statistics.median(ok),
        p95=_nearest_rank(ok, 95),
        p99=_nearest_rank(ok, 99),
        min=ok[0],
        max=ok[-1],
    )


def plan_windows(gt: GroundTruthFile, config: RunConfig) -> dict[str, int]:
    """Window size per query, validated before anything is sent."""
    vectors = gt.vectors(config.include_self)
    g_max = max(v.G for v in vectors.values())
    spec = config.window.bind(g_max)
    return {
        qid: require_scorable(select_window(v, spec), allow_nonpositive=config.allow_nonpositive_window)
        for qid, v in vectors.items()
    }


def run_benchmark(config: RunConfig, gt: GroundTruthFile | None = None) -> RunResult:
    if gt is None:
        if config.gt_path is None:
            raise StartupError("no ground truth given")
        try:
            gt = load_ground_truth(config.gt_path)
        except (OSError, ValueError) as exc:
            raise StartupError(f"cannot load ground truth: {exc}") from exc
    vectors = gt.vectors(config.include_self)
    if not vectors:
        raise StartupError("ground truth has no scorable queries")
    windows = plan_windows(gt, config)
    ping(config.server_endpoint, config.per_query_timeout)

    order = list(vectors)
    if config.shuffle_seed is not None:
        random.Random(config.shuffle_seed).shuffle(order)

    endpoint, timeout = config.server_endpoint, config.per_query_timeout
    for qid in itertools.islice(itertools.cycle(order), config.warmup_queries):
        _timed(endpoint, qid, windows[qid], timeout)

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        answers = dict(zip(order, pool.map(lambda q: _timed(endpoint, q, windows[q], timeout), order)))

    scores, timings, responses = [], [], {}
    for qid, vector in vectors.items():
        retrieved, timing = answers[qid]
        timings.append(timing)
        if retrieved is None:
            log.warning("query %s failed: %s %s", qid, timing.outcome.value, timing.detail)
            scores.append(worst_case_score(vector, windows[qid], config.penalty, literal=config.literal_nrr))
        else:
            responses[qid] = list(retrieved.ranked)
            scores.append(score_query(retrieved, vector, windows[qid], config.penalty, literal=config.literal_nrr))

    return RunResult(
        config=config,
        gt_version=gt.version,
        g_max=max(v.G for v in vectors.values()),
        score=score_benchmark(scores),
        timings=timings,
        timing_stats=timing_stats(timings),
        responses=responses,
        clock_resolution=time.get_clock_info(CLOCK).resolution,
    )
