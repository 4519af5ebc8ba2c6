import math

import numpy as np
import pytest

from fieldlaws import dsequences as ds
from fieldlaws import fieldgen as fg
from fieldlaws import slln
from fieldlaws.lattice import MultiIndex, RectangleSchedule

from oracles import harmonic


def test_trajectory_trivial():
    sched = RectangleSchedule.dyadic(2, 4)
    z = slln.trajectory(fg.iid("point_mass(0)"), ds.size_seq(), sched, reps=3, seed=1)
    assert np.all(z.values == 0)
    one = slln.trajectory(fg.iid("point_mass(1)"), ds.size_seq(), sched, reps=2, seed=1)
    assert np.allclose(one.values, 1.0)
    recs = one.records()
    assert len(recs) == 10 and recs[-1].n == MultiIndex(16, 16) and recs[-1].replicate == 1


def test_trajectory_rademacher_shrinks():
    tr = slln.trajectory(fg.iid("rademacher"), ds.size_seq(), RectangleSchedule.dyadic(2, 8),
                         reps=100, seed=2024)
    s = tr.summary()
    assert s["median_step_fraction"] >= 0.9
    assert s["consistent"]
    assert "horizon (256,256)" in s["verdict"]


def test_trajectory_path_consistent():
    model = fg.iid("normal(0,1)")
    short = slln.trajectory(model, ds.size_seq(), RectangleSchedule.dyadic(2, 3), reps=4, seed=9)
    long = slln.trajectory(model, ds.size_seq(), RectangleSchedule.dyadic(2, 5), reps=4, seed=9)
    assert np.array_equal(short.values, long.values[:, :4])


def test_threads_do_not_change_results():
    model = fg.iid("normal(0,1)")
    sched = RectangleSchedule.dyadic(2, 5)
    a = slln.trajectory(model, ds.size_seq(), sched, reps=8, seed=9, threads=1)
    b = slln.trajectory(model, ds.size_seq(), sched, reps=8, seed=9, threads=4)
    assert np.array_equal(a.values, b.values)


def test_trajectory_errors():
    with pytest.raises(Exception, match="not increasing"):
        slln.trajectory(fg.iid("rademacher"), ds.size_seq(), [(2, 2), (1, 1)], reps=1)
    neg = ds.constant_seq(-1.0)
    with pytest.raises(slln.SllnError, match="not positive"):
        slln.trajectory(fg.iid("rademacher"), neg, RectangleSchedule.dyadic(1, 2), reps=1)


def test_trajectory_csv():
    tr = slln.trajectory(fg.iid("point_mass(1)"), ds.size_seq(), RectangleSchedule.dyadic(1, 1),
                         reps=1, seed=0)
    assert tr.to_csv() == 'replicate,n,statistic\n0,(1),1.0\n0,(2),1.0\n'


def test_sup_ratio_trivial():
    assert slln.sup_ratio(fg.iid("point_mass(0)"), ds.size_seq(), (8, 8), reps=3).values.max() == 0
    s = slln.sup_ratio(fg.iid("point_mass(1)"), ds.size_seq(), (8, 8), reps=3)
    assert np.allclose(s.values, 1.0)


def test_sup_ratio_stable_under_doubling():
    beta = ds.construct_beta(ds.constant_seq(1.0), ds.size_seq(), 2.0, (128, 128)).beta
    drift = slln.sup_drift(fg.iid("rademacher"), beta, (64, 64), reps=200, seed=77)
    assert drift["quantile_doubled"] >= drift["quantile"]
    assert drift["drift"] < 0.10


def test_logweighted_closed_form():
    n = 1000
    res = slln.logweighted_demo(fg.iid("point_mass(1)"), [(n, n)], reps=1, fit_top=None)
    expected = (harmonic(n) / math.log(n)) ** 2
    assert res.trajectory.values[0, 0] == pytest.approx(expected, rel=1e-13)
    assert expected == pytest.approx(1.174, abs=1e-3)


@pytest.mark.parametrize("n", [(1, 1), (3, 7), (20, 5), (64, 2)])
def test_logweighted_separable(n):
    X = np.ones(n)
    got = slln.logweighted_statistic(X, [MultiIndex(n)])[0]
    want = math.prod(harmonic(k) for k in n) / math.prod(max(1.0, math.log(k)) for k in n)
    assert got == pytest.approx(want, rel=1e-13)


def test_logweighted_zero_and_fit():
    res = slln.logweighted_demo(fg.iid("point_mass(0)"), RectangleSchedule.dyadic(2, 3), reps=2,
                                fit_top=2, fit_reps=200, seed=1)
    assert np.all(res.trajectory.values == 0)
    assert res.C_hat == 0
    res = slln.logweighted_demo(fg.iid("rademacher"), RectangleSchedule.dyadic(2, 2), reps=2,
                                fit_top=1, seed=1)
    assert res.C_mode == "exact" and res.C_hat > 0
    assert res.summary()["hypothesis"]["r"] == 2.0


def test_logweighted_needs_r_above_one():
    with pytest.raises(slln.SllnError):
        slln.logweighted_demo(fg.iid("rademacher"), RectangleSchedule.dyadic(1, 2), r=1.0)
