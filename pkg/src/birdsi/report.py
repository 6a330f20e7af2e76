"""Benchmark reports, results files and offline rescoring.

A results file records ranked answers, one block per query::

    query <id>
    <best id>
    <next id>
    ...
    <blank line>

Offline scoring of such a file goes through exactly the same scorer as a
live run, so a recorded run rescored offline reproduces its score.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from .groundtruth import GroundTruthFile
from .runner import CLOCK, RunResult, TimingStats
from .scoring import (
    BenchmarkScore,
    PenaltyPolicy,
    QueryScore,
    RetrievedList,
    ScoringError,
    mean,
    score_benchmark,
    score_query,
    worst_case_score,
)
from .window import WindowSpec, require_scorable, select_window

FORMAT_VERSION = 1
MISSING = "MISSING"


class ResultsFileError(ValueError):
    pass


def read_results(text: str) -> dict[str, list[str]]:
    results: dict[str, list[str]] = {}
    current: list[str] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            current = None
            continue
        if current is None:
            word, _, qid = line.partition(" ")
            if word != "query" or not qid or " " in qid:
                raise ResultsFileError(f"line {lineno}: expected 'query <id>'")
            if qid in results:
                raise ResultsFileError(f"line {lineno}: query {qid} appears twice")
            current = results[qid] = []
        else:
            if " " in line:
                raise ResultsFileError(f"line {lineno}: expected a single identifier")
            current.append(line)
    return results


def load_results(path: str | os.PathLike) -> dict[str, list[str]]:
    return read_results(Path(path).read_text(encoding="utf-8"))


def format_results(responses: Mapping[str, Iterable[str]]) -> str:
    blocks = ["\n".join([f"query {qid}", *ranked]) for qid, ranked in sorted(responses.items())]
    return "".join(b + "\n\n" for b in blocks)


@dataclass(frozen=True)
class ReportRow:
    score: QueryScore
    outcome: str
    response_time: float | None = None


@dataclass
class Report:
    mode: str
    timestamp: str
    config: dict[str, str]
    gt_version: int
    g_max: int
    score: BenchmarkScore
    rows: list[ReportRow]
    timing_stats: TimingStats | None = None
    failures: int = 0
    clock: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def summary_line(self) -> str:
        mean_ms = _ms(self.timing_stats.mean) if self.timing_stats else "n/a"
        return (
            f"S={_dec(self.score.S)}  mean_response_ms={mean_ms}  "
            f"queries={self.score.Q}  failures={self.failures}"
        )

    def to_text(self) -> str:
        lines = [
            self.summary_line(),
            f"format_version {self.format_version}",
            f"timestamp {self.timestamp}",
            f"mode {self.mode}",
            f"ground_truth version={self.gt_version} g_max={self.g_max}",
            "config " + " ".join(f"{k}={v}" for k, v in self.config.items()),
            f"precision_mean={_dec(self._mean('precision'))}  recall_mean={_dec(self._mean('recall'))}",
        ]
        if self.timing_stats is not None:
            t = self.timing_stats
            lines.append(
                f"timing_ms mean={_ms(t.mean)} median={_ms(t.median)} p95={_ms(t.p95)} "
                f"p99={_ms(t.p99)} min={_ms(t.min)} max={_ms(t.max)} ok={t.count}"
            )
        if self.clock:
            lines.append("clock " + " ".join(f"{k}={v}" for k, v in self.clock.items()))
        lines.append("")
        header = ("query_id", "G", "W", "F", "mu", "R", "RR", "NRR", "response_ms", "outcome")
        table = [header] + [
            (
                r.score.query_id, str(r.score.G), str(r.score.W), str(r.score.F), str(r.score.mu),
                _dec(r.score.R), _dec(r.score.RR), _dec(r.score.NRR),
                _ms(r.response_time) if r.response_time is not None else "-", r.outcome,
            )
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        for row in table:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:-1], widths[1:-1])]
            lines.append("  ".join(cells + [row[-1]]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": self.format_version,
            "summary": self.summary_line(),
            "run": {
                "mode": self.mode,
                "timestamp": self.timestamp,
                "config": self.config,
                "gt_version": self.gt_version,
                "g_max": self.g_max,
                "clock": self.clock,
            },
            "S": _dec(self.score.S),
            "S_exact": str(self.score.S),
            "Q": self.score.Q,
            "failures": self.failures,
            "precision_mean": _dec(self._mean("precision")),
            "recall_mean": _dec(self._mean("recall")),
            "timing_ms": None if self.timing_stats is None else {
                k: round(getattr(self.timing_stats, k) * 1000, 3)
                for k in ("mean", "median", "p95", "p99", "min", "max")
            },
            "queries": [
                {
                    "query_id": r.score.query_id,
                    "G": r.score.G,
                    "W": r.score.W,
                    "F": r.score.F,
                    "mu": r.score.mu,
                    "R": _dec(r.score.R),
                    "RR": _dec(r.score.RR),
                    "NRR": _dec(r.score.NRR),
                    "NRR_exact": str(r.score.NRR),
                    "response_ms": None if r.response_time is None else round(r.response_time * 1000, 3),
                    "outcome": r.outcome,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def _mean(self, attr: str) -> Fraction:
        return mean([getattr(r.score, attr) for r in self.rows])


def _dec(value: Fraction) -> str:
    # round half away from zero at 6 places, exactly
    scaled = abs(value) * 10**6
    q = int(scaled + Fraction(1, 2))
    sign = "-" if value < 0 and q else ""
    return f"{sign}{q // 10**6}.{q % 10**6:06d}"


def _ms(seconds: float) -> str:
    return f"{seconds * 1000:.3f}"


def now_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def scoring_config(window: WindowSpec, penalty: PenaltyPolicy, literal: bool, include_self: bool) -> dict[str, str]:
    config = {"window": str(window), "penalty": str(penalty)}
    if literal:
        config["nrr"] = "literal"
    if not include_self:
        config["query_self"] = "excluded"
    return config


def report_from_run(result: RunResult, timestamp: str | None = None) -> Report:
    c = result.config
    config = {
        "server": c.server_endpoint,
        **scoring_config(c.window, c.penalty, c.literal_nrr, c.include_self),
        "concurrency": str(c.concurrency),
        "timeout_s": f"{c.per_query_timeout:g}",
        "warmup": str(c.warmup_queries),
        "order": c.query_order,
    }
    rows = [
        ReportRow(score, timing.outcome.value, timing.response_time)
        for score, timing in zip(result.score.per_query, result.timings)
    ]
    return Report(
        mode="run",
        timestamp=timestamp or now_timestamp(),
        config=config,
        gt_version=result.gt_version,
        g_max=result.g_max,
        score=result.score,
        rows=rows,
        timing_stats=result.timing_stats,
        failures=result.failures,
        clock={"source": CLOCK, "resolution_s": f"{result.clock_resolution:g}"},
    )


def score_offline(
    gt: GroundTruthFile,
    results: Mapping[str, list[str]],
    window: WindowSpec = WindowSpec.convex(),
    penalty: PenaltyPolicy = PenaltyPolicy(),
    *,
    literal: bool = False,
    include_self: bool = True,
    allow_nonpositive_window: bool = False,
    timestamp: str | None = None,
) -> Report:
    """Score recorded answers; queries without a block are scored worst-case and flagged."""
    vectors = gt.vectors(include_self)
    unknown = sorted(set(results) - set(vectors))
    if unknown:
        raise ResultsFileError(f"{len(unknown)} unknown query id(s) in results, first {unknown[0]}")
    g_max = max(v.G for v in vectors.values())
    spec = window.bind(g_max)
    rows = []
    for qid, vector in vectors.items():
        W = require_scorable(select_window(vector, spec), allow_nonpositive=allow_nonpositive_window)
        if qid in results:
            try:
                retrieved = RetrievedList(qid, tuple(results[qid]))
            except ScoringError as exc:
                raise ResultsFileError(str(exc)) from exc
            rows.append(ReportRow(score_query(retrieved, vector, W, penalty, literal=literal), "OK"))
        else:
            rows.append(ReportRow(worst_case_score(vector, W, penalty, literal=literal), MISSING))
    return Report(
        mode="score",
        timestamp=timestamp or now_timestamp(),
        config=scoring_config(window, penalty, literal, include_self),
        gt_version=gt.version,
        g_max=g_max,
        score=score_benchmark(r.score for r in rows),
        rows=rows,
        failures=sum(r.outcome == MISSING for r in rows),
    )
