"""Benchmark harness for content-based image retrieval servers.

Ground truth is compiled from a categorized image tree, queries are sent
to a retrieval server over a small HTTP protocol, and answers are scored
with a normalized rank metric inside a per-query scoring window.
"""

__version__ = "0.1.0"

from .scoring import (
    BenchmarkScore,
    GroundTruthVector,
    PenaltyPolicy,
    QueryScore,
    RetrievedList,
    score_benchmark,
    score_query,
)
from .window import WindowSpec, select_window, w_convex, w_mpeg, window_table

__all__ = [
    "BenchmarkScore",
    "GroundTruthVector",
    "PenaltyPolicy",
    "QueryScore",
    "RetrievedList",
    "WindowSpec",
    "score_benchmark",
    "score_query",
    "select_window",
    "w_convex",
    "w_mpeg",
    "window_table",
]
