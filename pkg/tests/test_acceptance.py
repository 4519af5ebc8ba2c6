"""Acceptance suite: nine criteria at their stated tolerances and time limits.

Each test prints one line ``criterion k: PASS|FAIL ...``. Run directly with
``python tests/test_acceptance.py`` for the summary alone.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fieldlaws import blockdecomp as bd
from fieldlaws import cli
from fieldlaws import dsequences as ds
from fieldlaws import fieldgen as fg
from fieldlaws import maximal as mx
from fieldlaws import slln
from fieldlaws.lattice import LatticeTable, MultiIndex, RectangleSchedule, iter_rectangle
from fieldlaws.lattice import prefix_sums, running_weighted_max

from oracles import brute_rectangle_sums, harmonic, scan_max

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def report(k: int, ok: bool, detail: str, capsys=None) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)


# ---- random instance families ---------------------------------------------

def random_shape(rng, dims=(1, 2), max_cells=9, max_side=None):
    """Sides drawn one at a time inside the remaining cell budget, then shuffled."""
    d = int(rng.choice(dims))
    side = max_cells if max_side is None else max_side
    n, left = [], max_cells
    for _ in range(d):
        k = int(rng.integers(1, min(side, left) + 1))
        n.append(k)
        left //= k
    rng.shuffle(n)
    return MultiIndex(tuple(n))


def random_binary_model(rng, n: MultiIndex) -> fg.FieldModel:
    vals = np.sort(rng.choice(np.arange(-3, 4), size=2, replace=False)).astype(float)
    p = float(rng.uniform(0.1, 0.9))
    margin = fg.Margin("finite", (tuple(vals), (p, 1 - p)))
    seed = int(rng.integers(2**32))
    if rng.uniform() < 0.25:
        w = tuple(int(x) for x in rng.integers(1, 3, size=n.d))
        if math.prod(k + wi - 1 for k, wi in zip(n.coords, w)) <= 16:
            return fg.FieldModel("moving_average", margin, seed, w)
    return fg.FieldModel("finite_support", margin, seed)


def random_a(rng, n: MultiIndex) -> ds.DSequence:
    t = rng.uniform(0, 2, size=n.coords) * (rng.uniform(size=n.coords) < 0.8)
    t[(0,) * n.d] = rng.uniform(0.2, 2)          # keeps every rectangle sum positive
    return ds.from_table(t, "random-a")


def random_b(rng, n: MultiIndex, start=(0.3, 3.0)) -> ds.DSequence:
    tables = []
    for k in n.coords:
        steps = rng.choice([1.0, 1.0, 1.2, 1.7, 2.5, 4.0], size=k - 1)
        tables.append(rng.uniform(*start) * np.concatenate([[1.0], np.cumprod(steps)]))
    return ds.product_from_tables(tables, "random-b")


# ---- criteria ---------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst_c, worst_m = 0.0, 0.0
    for r in (0.5, 1.0, 2.0, 3.0):
        c, m = bd.optimal_c(r)
        worst_c = max(worst_c, abs(c - 2 ** (1 / r)))
        worst_m = max(worst_m, abs(m - 4))
    dt = time.perf_counter() - t0
    ok = worst_c <= 1e-6 and worst_m <= 1e-6 and dt < 1
    return ok, f"max |c*-2^(1/r)| = {worst_c:.2e}, max |min-4| = {worst_m:.2e}, {dt:.2f}s"


def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240602)
    violations, steps = 0, 0
    for _ in range(200):
        n = random_shape(rng, dims=(1, 2, 3), max_cells=512, max_side=8)
        c = float(rng.choice([1.3, 2.0, 3.0]))
        r = float(rng.choice([0.5, 1.0, 2.0]))
        b = random_b(rng, n)
        a = rng.uniform(0, 3, size=n.coords) * (rng.uniform(size=n.coords) < 0.8)
        rep = bd.verify_chain(a, b, n, c, r)
        steps += len(rep.steps)
        violations += len(rep.failing())
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 30
    return ok, f"200 instances, {steps} step checks, {violations} violations, {dt:.1f}s"


def criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    violations, rows, worst = 0, 0, 0.0
    for _ in range(100):
        n = random_shape(rng)
        model = random_binary_model(rng, n)
        a, b = random_a(rng, n), random_b(rng, n)
        r = float(rng.choice([0.5, 1.0, 2.0, 3.0]))
        rep = mx.check_transfer_prob(model, a, b, r, list(iter_rectangle(n)), mode=mx.EXACT)
        assert len({row.eps for row in rep.rows}) == 7
        violations += len(rep.violations)
        rows += len(rep.rows)
        worst = max(worst, rep.max_ratio())
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 120
    return ok, f"100 instances, {rows} grid points, {violations} violations, max lhs/rhs {worst:.3f}, {dt:.1f}s"


def criterion_4():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    violations, rows, inapplicable = 0, 0, 0
    for _ in range(100):
        n = random_shape(rng)
        model = random_binary_model(rng, n)
        a, b = random_a(rng, n), random_b(rng, n)
        r = float(rng.choice([0.5, 1.0, 2.0, 3.0]))
        grid = list(iter_rectangle(n))
        for rep in (mx.check_transfer_moment(model, a, b, r, grid, fit_a=True),
                    mx.markov_bridge(model, a, r, grid, fit_a=True)):
            violations += len(rep.violations)
            inapplicable += rep.verdict == mx.INAPPLICABLE
            rows += len(rep.rows)
    dt = time.perf_counter() - t0
    ok = violations == 0 and inapplicable == 0 and dt < 120
    return ok, (f"100 instances x 2 checks, {rows} rows, {violations} violations, "
                f"{inapplicable} inapplicable, {dt:.1f}s")


def criterion_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    covered = 0
    for i in range(20):
        n = random_shape(rng)
        model = random_binary_model(rng, n)
        (M,), p = mx.max_statistics(model, [n], mode=mx.EXACT)
        eps = float(mx.weighted_median(M[:, 0], p))
        eps = eps if eps > 0 else 0.5
        exact = mx.exact_tail_prob(model, n, eps)
        ci = mx.estimate_tail_prob(model, n, eps, reps=10_000, seed=1000 + i, confidence=0.99)
        covered += ci.covers(exact)
    dt = time.perf_counter() - t0
    ok = covered >= 18 and dt < 60
    return ok, f"{covered}/20 Wilson 99% intervals cover the exact value, {dt:.1f}s"


def criterion_6():
    t0 = time.perf_counter()
    rep = ds.construct_beta(ds.power_seq(-1.0), ds.logplus_seq(), 2.0, (2**10, 2**10))
    dt = time.perf_counter() - t0
    ok = rep.quarter_drop >= 2 and rep.final_increment < 1e-4 and dt < 60
    return ok, (f"quarter drop {rep.quarter_drop:.3f} (need >= 2), final relative increment "
                f"{rep.final_increment:.2e} (need < 1e-4), {dt:.1f}s")


def criterion_7():
    t0 = time.perf_counter()
    sched = RectangleSchedule.dyadic(2, 10)
    res = slln.logweighted_demo(fg.iid("rademacher", seed=7), sched, reps=100, fit_top=3)
    s = res.summary()
    ctrl = slln.logweighted_demo(fg.iid("point_mass(1)", seed=7), sched, reps=1, fit_top=None)
    got = float(ctrl.trajectory.values[0, -1])
    want = (harmonic(1024) / math.log(1024)) ** 2
    rel = abs(got - want) / want
    dt = time.perf_counter() - t0
    ok = (s["median_step_fraction"] >= 0.9 and s["final_median_abs"] < 0.05 and rel <= 0.02
          and dt < 180)
    return ok, (f"median |T| drops in {s['median_step_fraction']:.0%} of steps, final median "
                f"{s['final_median_abs']:.4f}, control {got:.6f} vs {want:.6f} (rel {rel:.1e}), "
                f"{dt:.1f}s")


def criterion_8():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    bad_sum = bad_max = 0
    for _ in range(1000):
        n = random_shape(rng, dims=(1, 2, 3), max_cells=512)
        X = rng.integers(-1000, 1001, size=n.coords)
        S = prefix_sums(LatticeTable(X)).values
        bad_sum += not np.array_equal(S, brute_rectangle_sums(X))
        w = rng.uniform(0.1, 3.0, size=n.coords)
        M = running_weighted_max(LatticeTable(S), w).values
        bad_max += not np.array_equal(M, scan_max(S.astype(float), w))
    dt = time.perf_counter() - t0
    ok = bad_sum == 0 and bad_max == 0 and dt < 30
    return ok, f"1000 tables, {bad_sum} prefix-sum and {bad_max} running-max mismatches, {dt:.1f}s"


def criterion_9(tmp: Path):
    t0 = time.perf_counter()
    mismatched, compared = [], 0
    for cfg in sorted(CONFIGS.glob("*.toml")):
        cmd = next(line.split('"')[1] for line in cfg.read_text().splitlines()
                   if line.startswith("command"))
        outs = []
        for run in ("a", "b"):
            out = tmp / cfg.stem / run
            code = cli.run([cmd, "--config", str(cfg), "--out", str(out)])
            outs.append((code, {f.name: f.read_bytes() for f in out.glob("*.csv")}))
        (c1, f1), (c2, f2) = outs
        if c1 == 1:          # configs that are malformed on purpose write nothing
            continue
        compared += len(f1)
        if c1 != c2 or f1 != f2 or not f1:
            mismatched.append(cfg.name)
    dt = time.perf_counter() - t0
    ok = not mismatched and compared > 0
    return ok, f"{compared} CSV files compared, mismatches: {mismatched or 'none'}, {dt:.1f}s"


# ---- pytest entry points ----------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6, 7, 8])
def test_criterion(k, capsys):
    ok, detail = globals()[f"criterion_{k}"]()
    report(k, ok, detail, capsys)
    assert ok, detail


def test_criterion_9(tmp_path, capsys):
    ok, detail = criterion_9(tmp_path)
    report(9, ok, detail, capsys)
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    failed = 0
    for k in range(1, 10):
        if k == 9:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = criterion_9(Path(d))
        else:
            ok, detail = globals()[f"criterion_{k}"]()
        report(k, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
