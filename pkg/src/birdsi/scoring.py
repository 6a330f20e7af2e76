"""Normalized-rank retrieval scoring.

Every quantity is an exact :class:`fractions.Fraction` (or ``int`` for
counts) so that golden values compare bit-for-bit.  A query is scored by
locating the correct images inside the scoring window, summing their rank
positions, charging a penalty for every ground-truth image that never
showed up, and normalizing the resulting relative rank onto ``[0, 1]``
between the best achievable and the worst achievable value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence


class ScoringError(ValueError):
    """Base class for scoring input problems."""


class ConfigurationError(ScoringError):
    """Window/penalty settings cannot be used to score a query."""


class ContractViolation(AssertionError):
    """Internal invariant broken; indicates a scorer bug, not bad input."""


@dataclass(frozen=True)
class GroundTruthVector:
    query_id: str
    members: tuple[str, ...]
    _member_set: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        member_set = frozenset(members)
        if len(member_set) != len(members):
            raise ScoringError(f"duplicate ground-truth members for query {self.query_id}")
        if not members:
            raise ScoringError(f"empty ground truth for query {self.query_id}")
        object.__setattr__(self, "_member_set", member_set)

    @property
    def G(self) -> int:
        return len(self.members)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self._member_set


@dataclass(frozen=True)
class RetrievedList:
    query_id: str
    ranked: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ranked = tuple(self.ranked)
        object.__setattr__(self, "ranked", ranked)
        if len(set(ranked)) != len(ranked):
            raise ScoringError(f"duplicate identifiers in retrieved list for query {self.query_id}")

    def window(self, W: int) -> tuple[str, ...]:
        return self.ranked[:W]


class PenaltyKind(enum.Enum):
    W_PLUS_ONE = "w+1"
    MULTIPLIER = "multiplier"


@dataclass(frozen=True)
class PenaltyPolicy:
    """Cost charged per missed ground-truth image.

    ``W_PLUS_ONE`` charges one past the last window rank.  ``MULTIPLIER``
    charges ``multiplier * W``; 1.25 gives the MPEG-7 color-experiment
    convention.
    """

    kind: PenaltyKind = PenaltyKind.W_PLUS_ONE
    multiplier: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "multiplier", Fraction(self.multiplier))
        if self.kind is PenaltyKind.MULTIPLIER and self.multiplier <= 1:
            raise ConfigurationError(
                f"penalty multiplier must exceed 1, got {self.multiplier}"
            )

    @classmethod
    def w_plus_one(cls) -> PenaltyPolicy:
        return cls(PenaltyKind.W_PLUS_ONE)

    @classmethod
    def times(cls, multiplier: Fraction | int | str) -> PenaltyPolicy:
        return cls(PenaltyKind.MULTIPLIER, Fraction(multiplier))

    @classmethod
    def parse(cls, text: str) -> PenaltyPolicy:
        """Parse ``w+1`` or ``multiplier:<c>`` (``mult:<c>`` also accepted)."""
        text = text.strip()
        if text.lower() in ("w+1", "w_plus_one"):
            return cls.w_plus_one()
        name, sep, value = text.partition(":")
        if sep and name.lower() in ("multiplier", "mult"):
            try:
                return cls.times(Fraction(value))
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigurationError(f"bad penalty multiplier {value!r}") from exc
        raise ConfigurationError(f"unknown penalty spec {text!r}")

    def __str__(self) -> str:
        if self.kind is PenaltyKind.W_PLUS_ONE:
            return "w+1"
        return f"multiplier:{_fmt_fraction(self.multiplier)}"


@dataclass(frozen=True)
class QueryScore:
    query_id: str
    G: int
    W: int
    F: int
    mu: int
    R: Fraction
    RR: Fraction
    RR_best: Fraction
    RR_worst: Fraction
    NRR: Fraction
    precision: Fraction = Fraction(0)
    recall: Fraction = Fraction(0)


@dataclass(frozen=True)
class BenchmarkScore:
    per_query: tuple[QueryScore, ...]
    S: Fraction

    @property
    def Q(self) -> int:
        return len(self.per_query)


def matches(w_image: str, ground_truth: GroundTruthVector) -> bool:
    """Step function: 1 iff the retrieved image is a ground-truth member."""
    return w_image in ground_truth


def _correct_ranks(retrieved: RetrievedList, gt: GroundTruthVector, W: int) -> list[int]:
    if W < 1:
        raise ScoringError(f"window must be >= 1, got {W}")
    return [w for w, image in enumerate(retrieved.window(W), start=1) if image in gt]


def found_count(retrieved: RetrievedList, gt: GroundTruthVector, W: int) -> int:
    return len(_correct_ranks(retrieved, gt, W))


def missed_count(F: int, G: int) -> int:
    if not 0 <= F <= G:
        raise ContractViolation(f"found count {F} outside [0, {G}]")
    return G - F


def rank_sum(retrieved: RetrievedList, gt: GroundTruthVector, W: int) -> int:
    return sum(_correct_ranks(retrieved, gt, W))


def penalty(W: int, policy: PenaltyPolicy) -> Fraction:
    if W < 1:
        raise ScoringError(f"window must be >= 1, got {W}")
    if policy.kind is PenaltyKind.W_PLUS_ONE:
        return Fraction(W + 1)
    return policy.multiplier * W


def retrieval_rank(sigma: int, mu: int, pi: Fraction) -> Fraction:
    return Fraction(sigma) + mu * Fraction(pi)


def relative_rank(R: Fraction, G: int) -> Fraction:
    return Fraction(R) / G


def rr_best(G: int) -> Fraction:
    return Fraction(1 + G, 2)


def rr_worst(W: int, policy: PenaltyPolicy) -> Fraction:
    # all G images missed: R = G * pi, so RR = pi
    return penalty(W, policy)


def normalized_rank(
    RR: Fraction, RR_best: Fraction, RR_worst: Fraction, *, literal: bool = False
) -> Fraction:
    """Map a relative rank onto [0, 1] between its best and worst values.

    ``literal=True`` reproduces the unshifted printed form
    ``RR / (RR_worst - RR_best)``, which is *not* zero for a perfect
    retrieval.  It exists only for comparison with published numbers.
    """
    span = RR_worst - RR_best
    if span <= 0:
        raise ContractViolation(f"degenerate rank interval [{RR_best}, {RR_worst}]")
    if literal:
        return Fraction(RR) / span
    if not RR_best <= RR <= RR_worst:
        raise ContractViolation(f"relative rank {RR} outside [{RR_best}, {RR_worst}]")
    return (RR - RR_best) / span


def precision_recall_at_w(
    retrieved: RetrievedList, gt: GroundTruthVector, W: int
) -> tuple[Fraction, Fraction]:
    """Supplementary precision and recall over the scored window."""
    F = found_count(retrieved, gt, W)
    shown = min(W, len(retrieved.ranked))
    precision = Fraction(F, shown) if shown else Fraction(0)
    return precision, Fraction(F, gt.G)


def score_query(
    retrieved: RetrievedList,
    gt: GroundTruthVector,
    W: int,
    policy: PenaltyPolicy = PenaltyPolicy(),
    *,
    literal: bool = False,
) -> QueryScore:
    """Score one query's ranked results inside a window of size ``W``.

    Results past ``W`` are ignored; ground-truth images that are absent
    from the window count as missed.  ``W`` must be at least ``G``.
    """
    G = gt.G
    if W < G:
        raise ConfigurationError(
            f"query {gt.query_id}: window {W} is smaller than ground truth size {G}"
        )
    ranks = _correct_ranks(retrieved, gt, W)
    F = len(ranks)
    mu = missed_count(F, G)
    pi = penalty(W, policy)
    R = retrieval_rank(sum(ranks), mu, pi)
    RR = relative_rank(R, G)
    best = rr_best(G)
    worst = rr_worst(W, policy)
    shown = min(W, len(retrieved.ranked))
    return QueryScore(
        query_id=gt.query_id,
        G=G,
        W=W,
        F=F,
        mu=mu,
        R=R,
        RR=RR,
        RR_best=best,
        RR_worst=worst,
        NRR=normalized_rank(RR, best, worst, literal=literal),
        precision=Fraction(F, shown) if shown else Fraction(0),
        recall=Fraction(F, G),
    )


def worst_case_score(
    gt: GroundTruthVector, W: int, policy: PenaltyPolicy = PenaltyPolicy(), *, literal: bool = False
) -> QueryScore:
    """Score for a query that produced no usable answer."""
    return score_query(RetrievedList(gt.query_id), gt, W, policy, literal=literal)


def score_benchmark(per_query: Iterable[QueryScore]) -> BenchmarkScore:
    scores = tuple(per_query)
    if not scores:
        raise ScoringError("cannot score a benchmark with no queries")
    total = sum((s.NRR for s in scores), Fraction(0))
    return BenchmarkScore(per_query=scores, S=total / len(scores))


def mean(values: Sequence[Fraction]) -> Fraction:
    return sum(values, Fraction(0)) / len(values) if values else Fraction(0)


def _fmt_fraction(value: Fraction) -> str:
    return str(value.numerator) if value.denominator == 1 else str(value)
