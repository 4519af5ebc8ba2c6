"""Finite-horizon strong-law diagnostics for random fields.

Nothing here proves almost sure convergence. Trajectories of a normalised
partial sum are tracked along a schedule of rectangles, and the summaries say
whether the numbers are consistent with the limit at the horizon reached.

Within a replicate every schedule point reads the same realisation: cells are
a pure function of (seed, replicate, coordinates), so generating ``[1, last]``
once is the same as growing the rectangle step by step.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .dsequences import DSequence, logplus_weight, power_seq
from .fieldgen import FieldModel, generate_batch
from .lattice import MultiIndex, RectangleSchedule, as_index, cumulate
from .maximal import EXACT, MONTE_CARLO, fit_constant

QUANTILES = (0.5, 0.9, 0.99)
DEFAULT_STEP_FRACTION = 0.9
DEFAULT_FINAL_THRESHOLD = 0.05


class SllnError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryRecord:
    n: MultiIndex
    statistic: float
    replicate: int
    seed: int


def _schedule(schedule) -> RectangleSchedule:
    if isinstance(schedule, RectangleSchedule):
        return schedule
    return RectangleSchedule(tuple(schedule))


def _per_replicate(model: FieldModel, top: MultiIndex, reps: int,
                   fn: Callable[[np.ndarray], np.ndarray], threads: int = 1) -> np.ndarray:
    """Apply ``fn`` to each replicate's field on ``[1, top]``; stack the results."""
    if reps < 1:
        raise SllnError("reps must be at least 1")

    def one(k: int) -> np.ndarray:
        return fn(generate_batch(model, top, [k])[0])

    if threads > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(reps)))
    else:
        rows = [one(k) for k in range(reps)]
    return np.stack(rows)


@dataclass
class Trajectory:
    """Statistic per replicate (rows) and schedule point (columns)."""

    schedule: RectangleSchedule
    values: np.ndarray
    seed: int
    label: str
    model: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator[TrajectoryRecord]:
        for k, row in enumerate(self.values):
            for n, v in zip(self.schedule, row):
                yield TrajectoryRecord(n, float(v), k, self.seed)

    def __len__(self) -> int:
        return self.values.size

    def records(self) -> list[TrajectoryRecord]:
        return list(self)

    @property
    def reps(self) -> int:
        return self.values.shape[0]

    def median_abs(self) -> np.ndarray:
        return np.median(np.abs(self.values), axis=0)

    def quantiles(self, qs: Sequence[float] = QUANTILES) -> dict[str, list[float]]:
        a = np.abs(self.values)
        return {f"q{q:g}": np.quantile(a, q, axis=0).tolist() for q in qs}

    def step_fraction(self) -> float:
        """Fraction of schedule steps over which the median |statistic| drops."""
        med = self.median_abs()
        if len(med) < 2:
            return math.nan
        return float(np.mean(np.diff(med) < 0))

    def replicate_step_fraction(self) -> float:
        """Average over replicates of the fraction of steps where |statistic| drops."""
        a = np.abs(self.values)
        if a.shape[1] < 2:
            return math.nan
        return float(np.mean(np.diff(a, axis=1) < 0))

    def summary(self, step_fraction: float = DEFAULT_STEP_FRACTION,
                final_threshold: float = DEFAULT_FINAL_THRESHOLD) -> dict:
        med = self.median_abs()
        frac = self.step_fraction()
        final = float(med[-1])
        ok = bool(frac >= step_fraction and final < final_threshold)
        horizon = str(self.schedule.last)
        verdict = (f"consistent with the limit 0 at horizon {horizon}" if ok
                   else f"not consistent with the limit 0 at horizon {horizon}")
        return {
            "statistic": self.label,
            "reps": self.reps,
            "seed": self.seed,
            "model": self.model,
            "schedule": [list(n.coords) for n in self.schedule],
            "median_abs": med.tolist(),
            "quantiles_abs": self.quantiles(),
            "median_step_fraction": frac,
            "replicate_step_fraction": self.replicate_step_fraction(),
            "final_median_abs": final,
            "criteria": {"step_fraction": step_fraction, "final_threshold": final_threshold},
            "consistent": ok,
            "verdict": verdict,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "n", "statistic"])
        for rec in self:
            w.writerow([rec.replicate, str(rec.n), repr(rec.statistic)])
        return buf.getvalue()


def _seeded(model: FieldModel, seed: int | None) -> FieldModel:
    return model if seed is None else model.with_seed(seed)


def trajectory(model: FieldModel, b: DSequence, schedule, reps: int = 100,
               seed: int | None = None, threads: int = 1) -> Trajectory:
    """``S_n / b_n`` at each schedule point, one realisation per replicate."""
    sched = _schedule(schedule)
    top = sched.last
    bvals = np.array([b(n) for n in sched], dtype=np.float64)
    if np.any(~(bvals > 0)):
        bad = sched[int(np.argmin(bvals > 0))]
        raise SllnError(f"b is not positive at schedule point {bad}")
    m = _seeded(model, seed)
    idx = tuple(np.array([n[i] - 1 for n in sched]) for i in range(top.d))

    def stat(X: np.ndarray) -> np.ndarray:
        return cumulate(X)[idx] / bvals

    vals = _per_replicate(m, top, reps, stat, threads)
    return Trajectory(sched, vals, m.seed, f"S_n/{b.name}", m.describe())


def _inv_size(*grids):
    return 1.0 / np.prod(np.broadcast_arrays(*[np.asarray(g, dtype=np.float64) for g in grids]), axis=0)


def logweighted_statistic(X: np.ndarray, points: Sequence[MultiIndex]) -> np.ndarray:
    """``(1/|log n|) sum_{k<=n} X_k / <k>`` at each point, for one field ``X``."""
    n = MultiIndex(X.shape)
    grids = np.meshgrid(*[np.arange(1, k + 1) for k in n.coords], indexing="ij", sparse=True)
    S = cumulate(X * _inv_size(*grids))
    idx = tuple(np.array([p[i] - 1 for p in points]) for i in range(n.d))
    return S[idx] / np.array([logplus_weight(p) for p in points])


@dataclass
class LogWeightedResult:
    trajectory: Trajectory
    r: float
    C_hat: float | None
    C_grid: list[list[int]]
    C_mode: str
    notes: list[str] = field(default_factory=list)

    def summary(self, **kw) -> dict:
        out = self.trajectory.summary(**kw)
        out["hypothesis"] = {
            "r": self.r,
            "C_hat": self.C_hat,
            "grid": self.C_grid,
            "mode": self.C_mode,
            "note": "empirical constant on a finite grid; the assumed bound itself is not proved here",
        }
        out["notes"] = self.notes
        return out


def logweighted_demo(model: FieldModel, schedule, reps: int = 100, seed: int | None = None,
                     r: float = 2.0, fit_top: int | None = 4, fit_reps: int = 2000,
                     threads: int = 1) -> LogWeightedResult:
    """The log-weighted average per schedule point, plus an estimate of the hypothesis constant.

    ``fit_top`` sets the diagonal grid ``(2^j, .., 2^j), j <= fit_top`` on which
    ``C`` is fitted for ``a_l = 1/<l>`` and the field ``X_k / <k>``; ``None``
    skips the fit.
    """
    if not r > 1:
        raise SllnError(f"the log-weighted law needs r > 1, got {r}")
    sched = _schedule(schedule)
    m = _seeded(model, seed)
    vals = _per_replicate(m, sched.last, reps, lambda X: logweighted_statistic(X, sched.points), threads)
    traj = Trajectory(sched, vals, m.seed, "(1/|log n|) sum X_k/<k>", m.describe())
    notes = []
    C_hat, grid, mode = None, [], ""
    if fit_top is not None:
        pts = list(RectangleSchedule.dyadic(sched.d, fit_top))
        grid = [list(p.coords) for p in pts]
        mode = EXACT if m.enumerable and _small_enough(m, pts[-1]) else MONTE_CARLO
        C_hat = fit_constant(m, power_seq(-1.0), r, pts, mode=mode, reps=fit_reps,
                             seed=m.seed, cell_weights=_inv_size)
        if not math.isfinite(C_hat):
            notes.append("fitted constant is not finite on the grid")
    return LogWeightedResult(traj, float(r), C_hat, grid, mode, notes)


def _small_enough(model: FieldModel, top: MultiIndex) -> bool:
    vals, _ = model.margin.support()
    cells = top.size() if model.kind != "moving_average" else math.prod(
        k + w - 1 for k, w in zip(top.coords, model.window.coords))
    return cells * math.log2(max(2, len(vals))) <= 16


@dataclass
class SupRatio:
    horizon: MultiIndex
    values: np.ndarray          # (reps,)
    beta: str
    seed: int

    def quantiles(self, qs: Sequence[float] = QUANTILES) -> dict[str, float]:
        return {f"q{q:g}": float(np.quantile(self.values, q)) for q in qs}

    def to_dict(self) -> dict:
        return {"horizon": list(self.horizon.coords), "beta": self.beta, "seed": self.seed,
                "reps": int(self.values.size), "quantiles": self.quantiles(),
                "max": float(self.values.max())}


def sup_ratio(model: FieldModel, beta: DSequence, horizon, reps: int = 200,
              seed: int | None = None, threads: int = 1,
              horizons: Sequence | None = None) -> list[SupRatio] | SupRatio:
    """``sup_{l <= horizon} |S_l| / beta_l`` per replicate.

    With ``horizons`` (each ``<= horizon``) the sups over every sub-rectangle
    are read from the same realisations and a list is returned.
    """
    top = as_index(horizon)
    hs = [top] if horizons is None else [as_index(h) for h in horizons]
    for h in hs:
        if not h <= top:
            raise SllnError(f"horizon {h} exceeds {top}")
    w = beta.on_rectangle(top)
    if np.any(~(w > 0)):
        raise SllnError(f"{beta.name} must be positive")
    m = _seeded(model, seed)

    def sups(X: np.ndarray) -> np.ndarray:
        R = np.abs(cumulate(X)) / w
        return np.array([R[tuple(slice(0, k) for k in h.coords)].max() for h in hs])

    vals = _per_replicate(m, top, reps, sups, threads)
    out = [SupRatio(h, vals[:, j], beta.name, m.seed) for j, h in enumerate(hs)]
    return out[0] if horizons is None else out


def sup_drift(model: FieldModel, beta: DSequence, horizon, reps: int = 200,
              seed: int | None = None, q: float = 0.99, threads: int = 1) -> dict:
    """Relative change of the ``q`` quantile of the sup ratio when the horizon doubles."""
    h = as_index(horizon)
    big = MultiIndex(2 * k for k in h.coords)
    small_r, big_r = sup_ratio(model, beta, big, reps, seed, threads, horizons=[h, big])
    qs, qb = float(np.quantile(small_r.values, q)), float(np.quantile(big_r.values, q))
    return {"q": q, "horizon": list(h.coords), "doubled": list(big.coords),
            "quantile": qs, "quantile_doubled": qb,
            "drift": (qb - qs) / qs if qs > 0 else (0.0 if qb == 0 else math.inf)}
