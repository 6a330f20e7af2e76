"""Scoring-window sizes as a function of ground-truth size.

Two families are provided: the MPEG-7 rule ``min(4G, 2*Gmax)`` and the
inverted-parabola family

    W(G; k, m) = k * (m*Gmax - (G - m*Gmax)**2 / (m*Gmax))

rounded up to an integer.  The parabola is evaluated with exact rationals
so ceilings at integral values (e.g. G=30, k=m=1 -> 51) never drift.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple, Sequence

from .scoring import ConfigurationError, GroundTruthVector


class WindowError(ValueError):
    pass


TABLE_G_VALUES = (0, 1, 5, 10, 30, 49, 50, 51, 75, 100)
TABLE_COLUMNS = ("W_mpeg", "W=G", "W=2*G", "W(1,1)", "W(1,2)", "W(2,1)")


def _check_g(G: int, g_max: int) -> None:
    if g_max < 1:
        raise WindowError(f"g_max must be >= 1, got {g_max}")
    if not 0 <= G <= g_max:
        raise WindowError(f"ground truth size {G} outside [0, {g_max}]")


def w_mpeg(G: int, g_max: int) -> int:
    _check_g(G, g_max)
    return min(4 * G, 2 * g_max)


def w_convex_real(G: int | Fraction, g_max: int, k: int, m: int) -> Fraction:
    """Pre-ceiling value of the parabolic window."""
    if g_max < 1:
        raise WindowError(f"g_max must be >= 1, got {g_max}")
    if k < 1 or m < 1:
        raise WindowError(f"k and m must be positive, got k={k}, m={m}")
    peak = m * g_max
    return k * (peak - Fraction((G - peak) ** 2) / peak)


def w_convex(G: int, g_max: int, k: int, m: int) -> int:
    _check_g(G, g_max)
    return math.ceil(w_convex_real(G, g_max, k, m))


class WindowKind(enum.Enum):
    MPEG7 = "mpeg7"
    CONVEX = "convex"
    FIXED = "fixed"
    EQUAL_G = "equal-g"
    DOUBLE_G = "double-g"


@dataclass(frozen=True)
class WindowSpec:
    """How to size the scoring window for each query.

    ``g_max`` is usually unknown when the spec is parsed from a flag; bind
    it with :meth:`bind` once the ground truth is loaded.
    """

    kind: WindowKind = WindowKind.CONVEX
    k: int = 1
    m: int = 2
    value: int = 0
    g_max: int | None = None

    def __post_init__(self) -> None:
        if self.kind is WindowKind.CONVEX and (self.k < 1 or self.m < 1):
            raise WindowError(f"convex window needs positive k, m (got {self.k}, {self.m})")
        if self.kind is WindowKind.FIXED and self.value < 1:
            raise WindowError(f"fixed window must be >= 1, got {self.value}")
        if self.g_max is not None and self.g_max < 1:
            raise WindowError(f"g_max must be >= 1, got {self.g_max}")

    @classmethod
    def convex(cls, k: int = 1, m: int = 2, g_max: int | None = None) -> WindowSpec:
        return cls(WindowKind.CONVEX, k=k, m=m, g_max=g_max)

    @classmethod
    def parse(cls, text: str) -> WindowSpec:
        """Parse ``mpeg7``, ``convex:<k>,<m>``, ``fixed:<n>``, ``equal-g`` or ``double-g``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            if name == "convex":
                k, m = (int(x) for x in arg.split(",")) if arg else (1, 2)
                return cls.convex(k, m)
            if name == "fixed":
                return cls(WindowKind.FIXED, value=int(arg))
            kind = WindowKind(name)
        except ValueError as exc:
            raise WindowError(f"bad window spec {text!r}") from exc
        if arg or kind in (WindowKind.CONVEX, WindowKind.FIXED):
            raise WindowError(f"bad window spec {text!r}")
        return cls(kind)

    def bind(self, g_max: int) -> WindowSpec:
        return replace(self, g_max=g_max)

    @property
    def is_canonical(self) -> bool:
        """False for parabolic windows outside k, m in {1, 2}."""
        return self.kind is not WindowKind.CONVEX or (self.k in (1, 2) and self.m in (1, 2))

    def __str__(self) -> str:
        if self.kind is WindowKind.CONVEX:
            return f"convex:{self.k},{self.m}"
        if self.kind is WindowKind.FIXED:
            return f"fixed:{self.value}"
        return self.kind.value


class WindowChoice(NamedTuple):
    size: int
    warning: str | None = None
    undersized: bool = False


def window_size(G: int, spec: WindowSpec) -> int:
    if spec.kind is WindowKind.FIXED:
        return spec.value
    if spec.kind is WindowKind.EQUAL_G:
        return G
    if spec.kind is WindowKind.DOUBLE_G:
        return 2 * G
    if spec.g_max is None:
        raise WindowError(f"window {spec} needs g_max; call bind() first")
    if spec.kind is WindowKind.MPEG7:
        return w_mpeg(G, spec.g_max)
    return w_convex(G, spec.g_max, spec.k, spec.m)


def select_window(gt: GroundTruthVector, spec: WindowSpec) -> WindowChoice:
    """Window size for one query.

    A window that is not strictly larger than G comes back with a warning;
    callers must opt in before scoring with it.  A window smaller than G
    cannot be scored at all.
    """
    G = gt.G
    if spec.g_max is not None and G > spec.g_max:
        raise WindowError(f"query {gt.query_id}: G={G} exceeds g_max={spec.g_max}")
    size = window_size(G, spec)
    if size < G:
        return WindowChoice(size, f"query {gt.query_id}: window {size} < G={G}", undersized=True)
    if size == G:
        return WindowChoice(size, f"query {gt.query_id}: window {size} = G; no room for misplaced images")
    return WindowChoice(size)


def require_scorable(choice: WindowChoice, *, allow_nonpositive: bool) -> int:
    """Return the window size, refusing warned windows unless opted in."""
    if choice.warning is None:
        return choice.size
    if allow_nonpositive and not choice.undersized:
        return choice.size
    raise ConfigurationError(choice.warning)


@dataclass(frozen=True)
class WindowTable:
    g_values: tuple[int, ...]
    g_max: int
    columns: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, col in self.columns.items():
            if len(col) != len(self.g_values):
                raise WindowError(f"column {name} has {len(col)} cells, expected {len(self.g_values)}")

    def rows(self) -> list[tuple[int, ...]]:
        cols = [self.columns[name] for name in self.columns]
        return [(g, *(c[i] for c in cols)) for i, g in enumerate(self.g_values)]

    def to_csv(self) -> str:
        lines = [",".join(("G", *self.columns))]
        lines += [",".join(str(v) for v in row) for row in self.rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = ("G", *self.columns)
        rows = [tuple(str(v) for v in row) for row in self.rows()]
        widths = [max(len(r[i]) for r in (header, *rows)) for i in range(len(header))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in (header, *rows)]
        return "\n".join(lines) + "\n"


def window_table(g_values: Sequence[int] = TABLE_G_VALUES, g_max: int = 100) -> WindowTable:
    g_values = tuple(g_values)
    for g in g_values:
        _check_g(g, g_max)
    columns = {
        "W_mpeg": tuple(w_mpeg(g, g_max) for g in g_values),
        "W=G": g_values,
        "W=2*G": tuple(2 * g for g in g_values),
        "W(1,1)": tuple(w_convex(g, g_max, 1, 1) for g in g_values),
        "W(1,2)": tuple(w_convex(g, g_max, 1, 2) for g in g_values),
        "W(2,1)": tuple(w_convex(g, g_max, 2, 1) for g in g_values),
    }
    return WindowTable(g_values, g_max, columns)
