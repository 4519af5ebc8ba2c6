import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fieldlaws import dsequences as ds
from fieldlaws.lattice import MultiIndex, RectangleSchedule


def test_size_and_logplus_examples():
    assert ds.size((2, 3)) == 6 and ds.size((1, 1, 1)) == 1 and ds.size((5,)) == 5
    assert ds.logplus_weight((1, 1)) == 1
    assert ds.logplus_weight((2, 2)) == 1
    assert ds.logplus_weight((20, 20)) == pytest.approx(math.log(20) ** 2)
    # (ln 20)^2 = 8.97441..., quoted elsewhere rounded as 8.9742
    assert ds.logplus_weight((20, 20)) == pytest.approx(8.9744, abs=1e-4)


@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=4))
def test_logplus_at_least_one(coords):
    assert ds.logplus_weight(coords) >= 1


def test_families_are_product_type():
    for seq in (ds.size_seq(), ds.logplus_seq()):
        assert seq.product_type and seq.nondecreasing
        seq.check((9, 9, 3))
    t = ds.size_seq().on_rectangle((3, 4))
    assert np.array_equal(t, np.outer(np.arange(1, 4), np.arange(1, 5)))


def test_make_product_examples():
    b = ds.make_product([ds.size_seq(), ds.geometric_seq(2.0)])
    assert b((3, 2)) == 12
    one = ds.make_product([ds.constant_seq(1.0)] * 3)
    assert np.all(one.on_rectangle((3, 3, 3)) == 1)
    nb = ds.make_product([lambda k: 3.0 + k, lambda k: 2.0 * k], normalize=True)
    assert nb((1, 1)) == 1.0


def test_make_product_rejects_nonpositive():
    with pytest.raises(ds.SequenceError, match="nonpositive"):
        ds.make_product([lambda k: k - 2.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(1.0, 3.0),
       st.tuples(st.integers(1, 20), st.integers(1, 20)),
       st.tuples(st.integers(1, 20), st.integers(1, 20)))
def test_normalisation_keeps_ratios(c0, q, m, n):
    b = ds.make_product([lambda k, c=c0: c * k, ds.geometric_seq(q)])
    nb, b1 = ds.normalized(b, 2)
    assert b1 == pytest.approx(c0 * q)
    assert nb((1, 1)) == pytest.approx(1.0)
    assert nb(n) / nb(m) == pytest.approx(b(n) / b(m), rel=1e-12)


def test_flag_spot_check_catches_lies():
    liar = ds.DSequence(factors=lambda k: 10.0 - np.asarray(k, dtype=float), name="liar",
                        positive=True, nondecreasing=True)
    with pytest.raises(ds.SequenceError):
        liar.check((20,))


def test_parse_family():
    assert ds.parse_family("size")((2, 3)) == 6
    assert ds.parse_family("power:-1")((2, 2)) == 0.25
    assert ds.parse_family("constant:2.5")((7,)) == 2.5
    p = ds.parse_family("product:[size,geometric:2]")
    assert p((3, 2)) == 12
    for bad in ("nosuch", "power:x", "product:size"):
        with pytest.raises(ds.SequenceError):
            ds.parse_family(bad)


def test_series_converges_geometric():
    a = ds.DSequence(factors=lambda k: 2.0 ** -np.asarray(k, dtype=float), name="2^-n",
                     positive=True)
    v = ds.series_sum(a, ds.constant_seq(1.0), 1.0, ds.dyadic_to(MultiIndex(64)))
    assert v.verdict == ds.CONVERGED
    assert v.partial_sum == pytest.approx(1.0, abs=1e-15)


def test_series_harmonic_diverges():
    v = ds.series_sum(ds.power_seq(-1.0), ds.constant_seq(1.0), 1.0,
                      RectangleSchedule.dyadic(2, 10))
    assert v.verdict == ds.DIVERGING


def test_series_logweighted_converges():
    v = ds.series_sum(ds.power_seq(-1.0), ds.logplus_seq(), 2.0, RectangleSchedule.dyadic(2, 10),
                      tol=0.05)
    assert v.verdict == ds.CONVERGED
    # with the strict default the same sums are not yet settled
    strict = ds.series_sum(ds.power_seq(-1.0), ds.logplus_seq(), 2.0,
                           RectangleSchedule.dyadic(2, 10))
    assert strict.verdict != ds.DIVERGING


def test_series_rejects_bad_r():
    with pytest.raises(ds.SequenceError):
        ds.series_sum(ds.size_seq(), ds.size_seq(), 0.0, RectangleSchedule.dyadic(1, 3))


def _beta_properties(rep, a, r, H):
    beta = rep.beta
    assert beta.product_type and beta.positive
    t = beta.on_rectangle(H)
    for ax in range(H.d):
        assert np.all(np.diff(t, axis=ax) >= 0)
    # beyond the horizon it keeps growing
    far = MultiIndex(tuple(10 * h for h in H.coords))
    assert beta(far) > beta(H)
    assert rep.last_quarter_mean < rep.first_quarter_mean
    tail = rep.ratio[rep.knee:]
    assert np.all(np.diff(tail) <= 1e-15)


def test_construct_beta_one_dimensional():
    a = ds.DSequence(factors=lambda k: 2.0 ** -np.asarray(k, dtype=float), name="2^-n",
                     positive=True)
    H = MultiIndex(2**14)
    rep = ds.construct_beta(a, ds.size_seq(), 1.0, H)
    _beta_properties(rep, a, 1.0, H)
    assert rep.partial_sums[-1] <= rep.bound
    assert rep.final_increment < 1e-6


def test_construct_beta_finite_support():
    a = ds.DSequence(factors=lambda k: (np.asarray(k) <= 5).astype(float), name="support5",
                     nonnegative=True)
    H = MultiIndex(256)
    rep = ds.construct_beta(a, ds.size_seq(), 2.0, H)
    _beta_properties(rep, a, 2.0, H)
    assert rep.final_increment == 0


def test_construct_beta_logweighted():
    H = MultiIndex(1024, 1024)
    rep = ds.construct_beta(ds.power_seq(-1.0), ds.logplus_seq(), 2.0, H)
    _beta_properties(rep, ds.power_seq(-1.0), 2.0, H)
    assert rep.quarter_drop >= 2
    assert rep.final_increment < 1e-4


def test_construct_beta_errors():
    with pytest.raises(ds.SequenceError, match="divergent"):
        ds.construct_beta(ds.constant_seq(1.0), ds.size_seq(), 0.5, (64, 64))
    with pytest.raises(ds.SequenceError, match="unbounded"):
        ds.construct_beta(ds.power_seq(-2.0), ds.constant_seq(1.0), 1.0, (64,))
    with pytest.raises(ds.SequenceError, match="too small"):
        ds.construct_beta(ds.power_seq(-1.0), ds.logplus_seq(), 2.0, (16, 16))
