import math
from fractions import Fraction

import pytest

from birdsi.scoring import ConfigurationError, GroundTruthVector
from birdsi.window import (
    TABLE_G_VALUES,
    WindowError,
    WindowKind,
    WindowSpec,
    require_scorable,
    select_window,
    w_convex,
    w_convex_real,
    w_mpeg,
    window_table,
)

# Comparison of scoring windows at Gmax = 100, transcribed cell by cell:
# G, W_mpeg, W=G, W=2G, W(1,1), W(1,2), W(2,1)
TABLE_1 = [
    (0, 0, 0, 0, 0, 0, 0),
    (1, 4, 1, 2, 2, 2, 4),
    (5, 20, 5, 10, 10, 10, 20),
    (10, 40, 10, 20, 19, 20, 38),
    (30, 120, 30, 60, 51, 56, 102),
    (49, 196, 49, 98, 74, 86, 148),
    (50, 200, 50, 100, 75, 88, 150),
    (51, 200, 51, 102, 76, 89, 152),
    (75, 200, 75, 150, 94, 122, 188),
    (100, 200, 100, 200, 100, 150, 200),
]


def vec(G, qid="q"):
    return GroundTruthVector(qid, tuple(f"m{i}" for i in range(G)))


def test_mpeg_examples():
    assert w_mpeg(30, 100) == 120
    assert w_mpeg(75, 100) == 200
    assert w_mpeg(0, 100) == 0
    with pytest.raises(WindowError):
        w_mpeg(101, 100)


def test_convex_examples():
    assert w_convex(10, 100, 1, 1) == 19
    assert w_convex(50, 100, 1, 2) == 88
    assert w_convex(49, 100, 2, 1) == 148
    with pytest.raises(WindowError):
        w_convex(0, 0, 1, 1)


def test_ceil_at_exact_integer():
    assert w_convex_real(30, 100, 1, 1) == 51
    assert w_convex(30, 100, 1, 1) == 51


def test_table_golden():
    t = window_table(TABLE_G_VALUES, 100)
    assert t.rows() == TABLE_1


def test_table_edge_rows():
    assert window_table([0], 1).rows() == [(0,) * 7]
    assert window_table([100], 100).rows() == [(100, 200, 100, 200, 100, 150, 200)]
    with pytest.raises(WindowError):
        window_table([101], 100)


def test_table_small_gmax_against_formulas():
    rows = window_table([0, 5, 10], 10).rows()
    for g, mpeg, eq, dbl, c11, c12, c21 in rows:
        assert mpeg == min(4 * g, 20)
        # independent float evaluation of the parabola, away from integer ties
        for (k, m), cell in {(1, 1): c11, (1, 2): c12, (2, 1): c21}.items():
            peak = m * 10
            assert cell == math.ceil(k * (peak - (g - peak) ** 2 / peak) - 1e-12)
    assert len(rows) == 3


def test_csv_rendering():
    csv = window_table().to_csv()
    expected = "G,W_mpeg,W=G,W=2*G,W(1,1),W(1,2),W(2,1)\n" + "".join(
        ",".join(map(str, row)) + "\n" for row in TABLE_1
    )
    assert csv == expected


def test_text_rendering_is_aligned():
    lines = window_table().to_text().splitlines()
    assert len({len(line) for line in lines}) == 1
    assert lines[0].split() == ["G", "W_mpeg", "W=G", "W=2*G", "W(1,1)", "W(1,2)", "W(2,1)"]


@pytest.mark.parametrize("g_max", [10, 100, 1000])
def test_w12_positivity(g_max):
    assert all(w_convex(G, g_max, 1, 2) > G for G in range(1, g_max + 1))


@pytest.mark.parametrize("g_max", [10, 100, 1000])
def test_w11_touches_g_only_at_gmax(g_max):
    assert w_convex(g_max, g_max, 1, 1) == g_max
    assert all(w_convex(G, g_max, 1, 1) > G for G in range(1, g_max))


def test_w12_tighter_than_mpeg():
    pairs = [(w_convex(G, 100, 1, 2), w_mpeg(G, 100)) for G in range(1, 101)]
    assert all(c <= m for c, m in pairs)
    assert any(c < m for c, m in pairs)


@pytest.mark.parametrize("k,m", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_constant_second_difference(k, m):
    g_max = 100
    values = [w_convex_real(G, g_max, k, m) for G in range(0, g_max + 1)]
    second = {values[i + 1] - 2 * values[i] + values[i - 1] for i in range(1, len(values) - 1)}
    assert second == {Fraction(-2 * k, m * g_max)}


def test_mpeg_kink_at_half_gmax():
    g_max = 100
    first = [w_mpeg(G + 1, g_max) - w_mpeg(G, g_max) for G in range(g_max)]
    assert set(first[:49]) == {4}
    assert set(first[50:]) == {0}
    steps = {first[i + 1] - first[i] for i in range(len(first) - 1)}
    assert steps - {0} == {-4}


def test_spec_parse_roundtrip():
    for text in ["mpeg7", "convex:1,2", "convex:2,1", "fixed:7", "equal-g", "double-g"]:
        assert str(WindowSpec.parse(text)) == text
    for bad in ["convex:1", "fixed", "fixed:0", "mpeg7:3", "square", "convex:0,1"]:
        with pytest.raises(WindowError):
            WindowSpec.parse(bad)


def test_canonical_flag():
    assert WindowSpec.convex(2, 2).is_canonical
    assert not WindowSpec.convex(3, 1).is_canonical


def test_select_window():
    spec = WindowSpec.convex(1, 2).bind(100)
    assert select_window(vec(10), spec).size == 20
    assert select_window(vec(10), WindowSpec(WindowKind.EQUAL_G)).size == 10
    assert select_window(vec(10), WindowSpec(WindowKind.DOUBLE_G)).size == 20
    assert select_window(vec(10), WindowSpec(WindowKind.MPEG7, g_max=100)).size == 40


def test_select_window_needs_gmax():
    with pytest.raises(WindowError):
        select_window(vec(3), WindowSpec.convex())
    with pytest.raises(WindowError):
        select_window(vec(3), WindowSpec.convex(g_max=2))


def test_warned_windows_need_opt_in():
    equal = select_window(vec(4, "abc"), WindowSpec(WindowKind.EQUAL_G))
    assert equal.warning and not equal.undersized
    with pytest.raises(ConfigurationError, match="abc"):
        require_scorable(equal, allow_nonpositive=False)
    assert require_scorable(equal, allow_nonpositive=True) == 4

    small = select_window(vec(4), WindowSpec(WindowKind.FIXED, value=3))
    assert small.undersized
    with pytest.raises(ConfigurationError):
        require_scorable(small, allow_nonpositive=True)

    ok = select_window(vec(4), WindowSpec(WindowKind.FIXED, value=9))
    assert ok.warning is None and require_scorable(ok, allow_nonpositive=False) == 9
