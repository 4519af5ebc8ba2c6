import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fieldlaws import fieldgen as fg
from fieldlaws.dsequences import constant_seq, power_seq
from fieldlaws.lattice import (
    LatticeError,
    LatticeTable,
    MultiIndex,
    RectangleSchedule,
    check_budget,
    iter_rectangle,
    prefix_sums,
    running_weighted_max,
)

from oracles import brute_rectangle_sums, inclusion_exclusion_sums, scan_max

small_shapes = hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=8).filter(
    lambda s: math.prod(s) <= 512)
indices = st.lists(st.integers(1, 6), min_size=2, max_size=2).map(MultiIndex)


def test_multiindex_basics():
    m = MultiIndex(2, 3)
    assert m == MultiIndex((2, 3))
    assert m.d == 2 and m.size() == 6 and str(m) == "(2,3)"
    assert MultiIndex(1, 3) <= m and MultiIndex(1, 3) < m
    assert not (MultiIndex(3, 1) <= m) and not (m <= MultiIndex(3, 1))


@pytest.mark.parametrize("bad", [(0, 1), (1, -2), (1.5, 2), ()])
def test_multiindex_rejects(bad):
    with pytest.raises(LatticeError):
        MultiIndex(bad)


def test_dimension_mismatch():
    with pytest.raises(LatticeError, match="dimension"):
        MultiIndex(1, 2) <= MultiIndex(1, 2, 3)


@given(indices, indices, indices)
def test_partial_order_axioms(a, b, c):
    assert a <= a
    if a <= b and b <= a:
        assert a == b
    if a <= b and b <= c:
        assert a <= c


def test_iter_rectangle_examples():
    assert [m.coords for m in iter_rectangle((2, 2))] == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert [m.coords for m in iter_rectangle((1, 1, 1))] == [(1, 1, 1)]
    items = list(iter_rectangle((3, 2)))
    assert len(items) == 6 and items[-1] == MultiIndex(3, 2)
    with pytest.raises(LatticeError):
        list(iter_rectangle((0, 2)))


def test_prefix_sum_examples():
    assert prefix_sums(LatticeTable([1, 2, 3])).values.tolist() == [1, 3, 6]
    S = prefix_sums(LatticeTable(np.ones((3, 3))))
    i, j = np.ogrid[1:4, 1:4]
    assert np.array_equal(S.values, (i * j).astype(float))
    assert prefix_sums(LatticeTable([[1, 2], [3, 4]]))[(2, 2)] == 10


@settings(max_examples=150, deadline=None)
@given(hnp.arrays(np.int64, small_shapes, elements=st.integers(-10**6, 10**6)))
def test_prefix_sums_match_brute_force_integers(arr):
    S = prefix_sums(LatticeTable(arr)).values
    assert S.dtype == np.int64
    assert np.array_equal(S, brute_rectangle_sums(arr))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.int64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                  elements=st.integers(-100, 100)))
def test_prefix_sums_match_inclusion_exclusion(arr):
    assert np.array_equal(prefix_sums(LatticeTable(arr)).values, inclusion_exclusion_sums(arr))


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, small_shapes,
                  elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)))
def test_prefix_sums_match_brute_force_floats(arr):
    S = prefix_sums(LatticeTable(arr)).values
    ref = brute_rectangle_sums(arr)
    scale = np.maximum(brute_rectangle_sums(np.abs(arr)), 1e-300)
    assert np.all(np.abs(S - ref) <= 1e-12 * scale + 1e-300)


def test_compensated_summation_long_axis():
    x = np.full(10**6, 0.1)
    assert prefix_sums(LatticeTable(x)).values[-1] == pytest.approx(math.fsum(x), rel=1e-15)


def test_nested_rectangles_agree():
    arr = np.random.default_rng(1).integers(-5, 5, size=(6, 7))
    big = prefix_sums(LatticeTable(arr)).values
    small = prefix_sums(LatticeTable(arr).restrict((4, 3))).values
    assert np.array_equal(big[:4, :3], small)


def test_overflow_names_cell():
    arr = np.zeros((2, 2), dtype=np.int64)
    arr[1, 1] = 2**62
    with pytest.raises(LatticeError, match=r"\(2,2\)"):
        prefix_sums(LatticeTable(arr))


def test_nonfinite_names_cell():
    with pytest.raises(LatticeError, match=r"\(1,2\)"):
        LatticeTable([[1.0, np.inf]])
    with pytest.raises(LatticeError, match="non-finite partial sum"):
        prefix_sums(LatticeTable([1e308, 1e308]))


def test_table_is_immutable():
    t = LatticeTable([1.0, 2.0])
    with pytest.raises(ValueError):
        t.values[0] = 5


def test_running_max_examples():
    S = prefix_sums(LatticeTable(np.ones((2, 2))))
    assert running_weighted_max(S, constant_seq(1.0))[(2, 2)] == 4
    S = prefix_sums(LatticeTable(np.ones((5, 4))))
    M = running_weighted_max(S, power_seq(-1.0))
    assert np.allclose(M.values, 1.0)


def test_running_max_matches_scan_on_rademacher():
    X = fg.generate(fg.iid("rademacher", seed=17), (4, 4))
    S = prefix_sums(X)
    M = running_weighted_max(S, constant_seq(1.0))
    assert np.array_equal(M.values, scan_max(S.values, np.ones((4, 4))))


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                  elements=st.floats(-50, 50, allow_nan=False)),
       st.floats(0.1, 10))
def test_running_max_scan_monotone_and_scale(arr, lam):
    S = prefix_sums(LatticeTable(arr))
    w = np.random.default_rng(0).uniform(0.5, 2.0, size=arr.shape)
    M = running_weighted_max(S, w).values
    assert np.array_equal(M, scan_max(S.values, w))
    for ax in range(arr.ndim):
        assert np.all(np.diff(M, axis=ax) >= 0)
    M2 = running_weighted_max(S, lam * w).values
    assert np.allclose(M2, lam * M, rtol=1e-14)


def test_running_max_rejects_nonpositive_weight():
    S = prefix_sums(LatticeTable(np.ones((2, 2))))
    with pytest.raises(LatticeError, match="nonpositive weight"):
        running_weighted_max(S, np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_budget():
    with pytest.raises(LatticeError, match="budget"):
        check_budget(MultiIndex(2**14, 2**14), budget=2**26 // 2)
    with pytest.raises(LatticeError, match="budget"):
        LatticeTable(np.zeros((10, 10)), budget=50)


def test_schedules():
    s = RectangleSchedule.dyadic(2, 3)
    assert [p.coords for p in s] == [(1, 1), (2, 2), (4, 4), (8, 8)]
    a = RectangleSchedule.anisotropic([1, 2], 2)
    assert [p.coords for p in a] == [(1, 1), (2, 4), (4, 16)]
    u = RectangleSchedule.unit_diagonal(MultiIndex(3, 2))
    assert [p.coords for p in u] == [(1, 1), (2, 2), (3, 2)]
    with pytest.raises(LatticeError, match="not increasing"):
        RectangleSchedule((MultiIndex(2, 2), MultiIndex(2, 1)))
    with pytest.raises(LatticeError):
        RectangleSchedule(())
