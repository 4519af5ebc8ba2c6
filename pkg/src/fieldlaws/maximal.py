"""Both sides of the rectangle maximal inequalities, exactly or by simulation.

Side (i) is ``P(max_{l<=n} |S_l| >= eps) <= C eps^-r sum_{l<=n} a_l``; the
weighted side (ii) replaces ``|S_l|`` by ``|S_l| / b_l`` and ``a_l`` by
``a_l b_l^-r`` at the cost of a factor ``4^d``. The moment versions use
``E max |S_l|^r`` instead of tail probabilities. Events are inclusive
(``>= eps``), which matters at atoms of enumerable models.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

from .dsequences import DSequence
from .fieldgen import FieldModel, enumerate_outcomes, generate_batch
from .lattice import MultiIndex, as_index, cumulate, cumulative_max, weight_table

EXACT = "exact"
MONTE_CARLO = "monte_carlo"
DEFAULT_CONFIDENCE = 0.99
_CHUNK_CELLS = 2**22

PASS, FAIL, INAPPLICABLE = "pass", "fail", "inapplicable"
# enumerated probabilities are still float sums, so equality cases may land an ulp high
REL_SLACK = 1e-12


class HypothesisError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateCI:
    estimate: float
    lower: float
    upper: float
    reps: int
    reliable: bool = True

    def __post_init__(self):
        if not self.lower <= self.estimate <= self.upper:
            raise ValueError(f"interval [{self.lower}, {self.upper}] misses {self.estimate}")

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def wilson(count: int, reps: int, confidence: float = DEFAULT_CONFIDENCE) -> EstimateCI:
    """Wilson score interval for ``count`` successes out of ``reps``."""
    ci = stats.binomtest(int(count), int(reps)).proportion_ci(confidence, method="wilson")
    p = count / reps
    return EstimateCI(p, min(float(ci.low), p), max(float(ci.high), p), reps)


def mean_ci(x: np.ndarray, confidence: float = DEFAULT_CONFIDENCE, reliable: bool = True) -> EstimateCI:
    """Normal-approximation interval for a sample mean."""
    x = np.asarray(x, dtype=np.float64)
    m = float(x.mean())
    if len(x) < 2:
        return EstimateCI(m, m, m, len(x), False)
    z = stats.norm.ppf(0.5 + confidence / 2)
    half = float(z * x.std(ddof=1) / math.sqrt(len(x)))
    ok = reliable and math.isfinite(half)
    return EstimateCI(m, m - half, m + half, len(x), ok)


# ---- draws ----------------------------------------------------------------

def _draws(model: FieldModel, N: MultiIndex, mode: str, reps: int,
           seed: int | None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(fields, probs)`` chunks: all outcomes, or equally weighted replicates."""
    if mode == EXACT:
        space = enumerate_outcomes(model, N)
        yield space.values, space.probs
        return
    if mode != MONTE_CARLO:
        raise ValueError(f"unknown mode {mode!r}")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    m = model if seed is None else model.with_seed(seed)
    step = max(1, _CHUNK_CELLS // N.size())
    for start in range(0, reps, step):
        ids = np.arange(start, min(reps, start + step))
        yield generate_batch(m, N, ids), np.full(len(ids), 1.0 / reps)


def _grid_top(n_grid: Sequence[MultiIndex]) -> MultiIndex:
    top = n_grid[0]
    for n in n_grid[1:]:
        top = top.cmax(n)
    return top


def max_statistics(model: FieldModel, n_grid: Sequence, weights: Sequence = (None,),
                   mode: str = MONTE_CARLO, reps: int = 1000, seed: int | None = None,
                   cell_weights=None) -> tuple[list[np.ndarray], np.ndarray]:
    """``max_{l<=n} |S_l| w_l`` for every draw and every ``n`` in the grid.

    Returns one ``(K, len(n_grid))`` array per weight (``None`` means w = 1)
    and the draw probabilities ``(K,)``. ``cell_weights`` rescales the field
    cell-wise before summation.
    """
    grid = [as_index(n) for n in n_grid]
    N = _grid_top(grid)
    wtabs = [None if w is None else weight_table(w, N) for w in weights]
    for wt in wtabs:
        if wt is not None and np.any(~(wt > 0)):
            raise ValueError("weights must be positive")
    cw = None if cell_weights is None else weight_table(cell_weights, N)
    idx = tuple(np.array([n[i] - 1 for n in grid]) for i in range(N.d))
    outs: list[list[np.ndarray]] = [[] for _ in wtabs]
    probs = []
    axes = tuple(range(1, N.d + 1))
    for X, p in _draws(model, N, mode, reps, seed):
        if cw is not None:
            X = X * cw
        absS = np.abs(cumulate(X, axes))
        for j, wt in enumerate(wtabs):
            M = cumulative_max(absS if wt is None else absS * wt, axes)
            outs[j].append(M[(slice(None),) + idx])
        probs.append(p)
    return [np.concatenate(o) for o in outs], np.concatenate(probs)


# ---- single-point estimators ----------------------------------------------

def _check_eps(eps: float) -> None:
    if not eps >= 0 or not math.isfinite(eps):
        raise ValueError(f"eps must be a finite nonnegative number, got {eps}")


def estimate_tail_prob(model: FieldModel, n, eps: float, weights: DSequence | None = None,
                       reps: int = 1000, seed: int | None = None,
                       confidence: float = DEFAULT_CONFIDENCE, cell_weights=None) -> EstimateCI:
    """Monte Carlo ``P(max_{l<=n} |S_l| w_l >= eps)`` with a Wilson interval."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    (M,), _ = max_statistics(model, [n], [weights], MONTE_CARLO, reps, seed, cell_weights)
    return wilson(int(np.count_nonzero(M[:, 0] >= eps)), reps, confidence)


def exact_tail_prob(model: FieldModel, n, eps: float, weights: DSequence | None = None,
                    cell_weights=None) -> float:
    """``P(max_{l<=n} |S_l| w_l >= eps)`` by enumerating every outcome."""
    _check_eps(eps)
    (M,), p = max_statistics(model, [n], [weights], EXACT, cell_weights=cell_weights)
    return float(p[M[:, 0] >= eps].sum())


def estimate_max_moment(model: FieldModel, n, r: float, reps: int = 1000,
                        seed: int | None = None, confidence: float = DEFAULT_CONFIDENCE,
                        weights: DSequence | None = None) -> EstimateCI:
    """Monte Carlo ``E max_{l<=n} (|S_l| w_l)^r``; heavy-tailed margins are flagged unreliable."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    (M,), _ = max_statistics(model, [n], [weights], MONTE_CARLO, reps, seed)
    return mean_ci(M[:, 0] ** r, confidence, reliable=not model.margin.heavy_tailed)


def exact_max_moment(model: FieldModel, n, r: float, weights: DSequence | None = None) -> float:
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    (M,), p = max_statistics(model, [n], [weights], EXACT)
    return float(p @ M[:, 0] ** r)


# ---- grids and reports ----------------------------------------------------

def default_eps_grid(scale: float) -> list[float]:
    """``{2^-3, ..., 2^3} * scale``."""
    scale = scale if scale > 0 and math.isfinite(scale) else 1.0
    return [scale * 2.0**k for k in range(-3, 4)]


def weighted_median(x: np.ndarray, p: np.ndarray) -> float:
    order = np.argsort(x, kind="stable")
    cp = np.cumsum(p[order])
    return float(x[order][np.searchsorted(cp, 0.5 - 1e-12)])


def rectangle_sums(a: DSequence, n_grid: Sequence[MultiIndex], b: DSequence | None = None,
                   r: float = 1.0) -> np.ndarray:
    """``sum_{l<=n} a_l b_l^-r`` for each ``n`` in the grid (``b = 1`` when absent)."""
    N = _grid_top(n_grid)
    t = a.on_rectangle(N)
    if np.any(t < 0):
        raise HypothesisError(f"{a.name} has negative values")
    if b is not None:
        t = t / b.on_rectangle(N) ** r
    S = cumulate(t)
    return np.array([S[tuple(c - 1 for c in n.coords)] for n in n_grid])


@dataclass
class GridRow:
    n: MultiIndex
    eps: float | None
    lhs: float
    lhs_lo: float
    lhs_hi: float
    rhs: float
    verdict: str
    hypothesis: float | None = None   # side (i) value at the same point, when relevant

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else math.inf)


@dataclass
class InequalityReport:
    kind: str
    mode: str
    rows: list[GridRow]
    fitted_C: float
    transfer_constant: float
    r: float
    provenance: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    status: str | None = None

    @property
    def verdict(self) -> str:
        if self.status is not None:
            return self.status
        return PASS if all(row.verdict == PASS for row in self.rows) else FAIL

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @property
    def violations(self) -> list[GridRow]:
        return [row for row in self.rows if row.verdict == FAIL]

    def max_ratio(self) -> float:
        vals = [row.ratio for row in self.rows if row.rhs > 0]
        return max(vals) if vals else 0.0

    CSV_COLUMNS = ("n", "eps", "lhs", "lhs_lo", "lhs_hi", "rhs", "verdict")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for row in self.rows:
            w.writerow([str(row.n), "" if row.eps is None else repr(float(row.eps)),
                        repr(float(row.lhs)), repr(float(row.lhs_lo)), repr(float(row.lhs_hi)),
                        repr(float(row.rhs)), row.verdict])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "verdict": self.verdict,
            "r": self.r,
            "fitted_C": self.fitted_C,
            "transfer_constant": self.transfer_constant,
            "max_observed_ratio": self.max_ratio(),
            "provenance": self.provenance,
            "notes": self.notes,
            "rows": [
                {"n": list(row.n.coords), "eps": row.eps, "lhs": row.lhs, "lhs_lo": row.lhs_lo,
                 "lhs_hi": row.lhs_hi, "rhs": row.rhs, "verdict": row.verdict,
                 "hypothesis": row.hypothesis}
                for row in self.rows
            ],
        }


def _tail_table(M: np.ndarray, p: np.ndarray, eps_grid: Sequence[float], mode: str,
                confidence: float) -> list[list[EstimateCI]]:
    """Per (n, eps) tail probability, exact or with Wilson bounds."""
    out = []
    for g in range(M.shape[1]):
        col = M[:, g]
        row = []
        for eps in eps_grid:
            hit = col >= eps
            if mode == EXACT:
                v = float(p[hit].sum())
                row.append(EstimateCI(v, v, v, len(p)))
            else:
                row.append(wilson(int(np.count_nonzero(hit)), len(p), confidence))
        out.append(row)
    return out


def _moment_table(M: np.ndarray, p: np.ndarray, r: float, mode: str, confidence: float,
                  reliable: bool) -> list[EstimateCI]:
    out = []
    for g in range(M.shape[1]):
        v = M[:, g] ** r
        if mode == EXACT:
            m = float(p @ v)
            out.append(EstimateCI(m, m, m, len(p)))
        else:
            out.append(mean_ci(v, confidence, reliable))
    return out


def _within(est: EstimateCI, rhs: float, mode: str) -> bool:
    """Point value (exact) or upper confidence limit (Monte Carlo) below ``rhs``, up to rounding."""
    lhs = est.estimate if mode == EXACT else est.upper
    return lhs <= rhs * (1 + REL_SLACK)


def _fit_from_tail(tail: list[list[EstimateCI]], sums: np.ndarray, eps_grid: Sequence[float],
                   r: float, mode: str, grid: Sequence[MultiIndex]) -> float:
    C = 0.0
    for g, row in enumerate(tail):
        for eps, est in zip(eps_grid, row):
            lhs = est.estimate if mode == EXACT else est.upper
            if lhs <= 0 and mode == EXACT:
                continue
            if sums[g] <= 0:
                if lhs > 0 and (mode == EXACT or est.estimate > 0):
                    raise HypothesisError(
                        f"hypothesis unsatisfiable on grid: sum of a is 0 at n={grid[g]} "
                        f"but P = {est.estimate} at eps={eps}")
                continue
            C = max(C, lhs * eps**r / sums[g])
    return C


def _resolve_grid(n_grid) -> list[MultiIndex]:
    if isinstance(n_grid, (MultiIndex, int)) or (
            isinstance(n_grid, (tuple, list)) and n_grid and isinstance(n_grid[0], (int, np.integer))):
        n_grid = [n_grid]
    grid = [as_index(n) for n in n_grid]
    if not grid:
        raise ValueError("n grid is empty")
    if len({n.d for n in grid}) != 1:
        raise ValueError("n grid mixes dimensions")
    return grid


def _eps_grid(eps_grid, M: np.ndarray, p: np.ndarray) -> tuple[list[float], str]:
    if eps_grid is not None:
        eps = [float(e) for e in eps_grid]
        if not eps or any(not e > 0 for e in eps):
            raise ValueError("eps grid must be nonempty and positive")
        return eps, "given"
    scale = weighted_median(M[:, -1], p)
    return default_eps_grid(scale), f"geometric 2^-3..2^3 x median max statistic ({scale!r})"


def fit_constant(model: FieldModel, a: DSequence, r: float, n_grid, eps_grid=None,
                 mode: str = EXACT, reps: int = 1000, seed: int | None = None,
                 confidence: float = DEFAULT_CONFIDENCE, cell_weights=None) -> float:
    """Smallest ``C`` with ``P(max|S| >= eps) <= C eps^-r sum a`` on the grid.

    Monte Carlo mode uses upper Wilson bounds, so the fitted constant errs high.
    """
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    grid = _resolve_grid(n_grid)
    (M,), p = max_statistics(model, grid, [None], mode, reps, seed, cell_weights)
    eps, _ = _eps_grid(eps_grid, M, p)
    tail = _tail_table(M, p, eps, mode, confidence)
    return _fit_from_tail(tail, rectangle_sums(a, grid), eps, r, mode, grid)


def _check_b(b: DSequence, grid: Sequence[MultiIndex]) -> None:
    if not (b.product_type and b.positive and b.nondecreasing):
        raise HypothesisError(f"{b.name} must be a positive nondecreasing product-type sequence")
    b.check(_grid_top(grid))


def _provenance(model: FieldModel, mode: str, reps: int, seed, confidence: float, **extra) -> dict:
    out = {"model": model.describe(), "mode": mode, "confidence": confidence}
    if mode == MONTE_CARLO:
        out["reps"] = reps
        out["seed"] = model.seed if seed is None else int(seed)
    out.update(extra)
    return out


def check_transfer_prob(model: FieldModel, a: DSequence, b: DSequence, r: float, n_grid,
                        eps_grid=None, mode: str = EXACT, reps: int = 1000,
                        seed: int | None = None, confidence: float = DEFAULT_CONFIDENCE,
                        C: float | None = None) -> InequalityReport:
    """Check ``P(max |S_l|/b_l >= eps) <= 4^d C eps^-r sum a_l b_l^-r`` on the grid.

    ``C`` is fitted from side (i) on the same draws and grid unless given.
    """
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    grid = _resolve_grid(n_grid)
    _check_b(b, grid)
    d = grid[0].d
    inv_b = weight_table(b, _grid_top(grid)) ** -1.0
    (M1, M2), p = max_statistics(model, grid, [None, inv_b], mode, reps, seed)
    eps, eps_src = _eps_grid(eps_grid, M1, p)
    tail1 = _tail_table(M1, p, eps, mode, confidence)
    tail2 = _tail_table(M2, p, eps, mode, confidence)
    sums_a = rectangle_sums(a, grid)
    if C is None:
        C = _fit_from_tail(tail1, sums_a, eps, r, mode, grid)
    K = 4.0**d
    sums_ab = rectangle_sums(a, grid, b, r)
    rows = []
    for g, n in enumerate(grid):
        for e, est, hyp in zip(eps, tail2[g], tail1[g]):
            rhs = K * C * e**-r * sums_ab[g]
            ok = _within(est, rhs, mode)
            rows.append(GridRow(n, e, est.estimate, est.lower, est.upper, rhs,
                                PASS if ok else FAIL, hyp.estimate))
    return InequalityReport("transfer-prob", mode, rows, C, K, r,
                            _provenance(model, mode, reps, seed, confidence, eps_grid=eps_src,
                                        a=a.name, b=b.name))


def _moment_hypothesis(model, a, r, grid, mode, reps, seed, confidence, fit_a, weights=(None,)):
    Ms, p = max_statistics(model, grid, list(weights), mode, reps, seed)
    reliable = not model.margin.heavy_tailed
    mom = _moment_table(Ms[0], p, r, mode, confidence, reliable)
    sums_a = rectangle_sums(a, grid)
    scale = 1.0
    if fit_a:
        worst = 0.0
        for g, est in enumerate(mom):
            v = est.estimate if mode == EXACT else est.upper
            if v > 0 and sums_a[g] <= 0:
                raise HypothesisError("hypothesis unsatisfiable on grid: sum of a is 0 with a nonzero moment")
            if v > 0:
                worst = max(worst, v / sums_a[g])
        scale = worst if worst > 0 else 1.0
    holds = all(_within(est, scale * s, mode)
                for est, s in zip(mom, sums_a))
    return Ms, p, mom, scale, holds


def check_transfer_moment(model: FieldModel, a: DSequence, b: DSequence, r: float, n_grid,
                          mode: str = EXACT, reps: int = 1000, seed: int | None = None,
                          confidence: float = DEFAULT_CONFIDENCE,
                          fit_a: bool = False) -> InequalityReport:
    """Check ``E max (|S_l|/b_l)^r <= 4^d sum a_l b_l^-r`` given ``E max |S_l|^r <= sum a_l``.

    With ``fit_a`` the sequence ``a`` is rescaled by the smallest factor making
    the moment hypothesis hold on the grid; the factor is reported as
    ``fitted_C``. If the hypothesis fails the report is marked inapplicable.
    """
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    grid = _resolve_grid(n_grid)
    _check_b(b, grid)
    d = grid[0].d
    inv_b = weight_table(b, _grid_top(grid)) ** -1.0
    Ms, p, mom1, scale, holds = _moment_hypothesis(model, a, r, grid, mode, reps, seed,
                                                   confidence, fit_a, (None, inv_b))
    mom2 = _moment_table(Ms[1], p, r, mode, confidence, not model.margin.heavy_tailed)
    K = 4.0**d
    sums_ab = scale * rectangle_sums(a, grid, b, r)
    rows = []
    for g, n in enumerate(grid):
        est = mom2[g]
        rhs = K * sums_ab[g]
        ok = _within(est, rhs, mode)
        rows.append(GridRow(n, None, est.estimate, est.lower, est.upper, rhs,
                            PASS if ok else FAIL, mom1[g].estimate))
    notes = []
    if model.margin.heavy_tailed:
        notes.append("heavy-tailed margin: moment intervals unreliable")
    report = InequalityReport("transfer-moment", mode, rows, scale, K, r,
                              _provenance(model, mode, reps, seed, confidence, a=a.name,
                                          b=b.name, a_scale=scale), notes)
    if not holds:
        report.status = INAPPLICABLE
        report.notes.append("moment hypothesis E max|S|^r <= sum a fails on the grid")
    return report


def markov_bridge(model: FieldModel, a: DSequence, r: float, n_grid, eps_grid=None,
                  mode: str = EXACT, reps: int = 1000, seed: int | None = None,
                  confidence: float = DEFAULT_CONFIDENCE, fit_a: bool = False) -> InequalityReport:
    """From ``E max|S|^r <= sum a`` to ``P(max|S| >= eps) <= eps^-r sum a`` (C = 1).

    Each row's ``hypothesis`` field holds the intermediate Markov bound
    ``eps^-r E max|S|^r``.
    """
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    grid = _resolve_grid(n_grid)
    Ms, p, mom, scale, holds = _moment_hypothesis(model, a, r, grid, mode, reps, seed,
                                                  confidence, fit_a)
    M = Ms[0]
    eps, eps_src = _eps_grid(eps_grid, M, p)
    tail = _tail_table(M, p, eps, mode, confidence)
    sums_a = scale * rectangle_sums(a, grid)
    rows = []
    for g, n in enumerate(grid):
        for e, est in zip(eps, tail[g]):
            rhs = e**-r * sums_a[g]
            ok = _within(est, rhs, mode)
            rows.append(GridRow(n, e, est.estimate, est.lower, est.upper, rhs,
                                PASS if ok else FAIL, e**-r * mom[g].estimate))
    report = InequalityReport("markov-bridge", mode, rows, 1.0, 1.0, r,
                              _provenance(model, mode, reps, seed, confidence, eps_grid=eps_src,
                                          a=a.name, a_scale=scale))
    if not holds:
        report.status = INAPPLICABLE
        report.notes.append("bridge inapplicable: moment hypothesis E max|S|^r <= sum a fails on the grid")
    return report
