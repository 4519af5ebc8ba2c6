"""Seeded random fields over lattice rectangles, plus exact outcome spaces.

Every cell value is a deterministic function of ``(seed, replicate, cell)``
through the counter-based uniforms in :mod:`fieldlaws._rng`; margins are
applied by inverse transform, one uniform per cell.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from . import _rng
from .lattice import (
    DEFAULT_CELL_BUDGET,
    LatticeTable,
    MultiIndex,
    as_index,
    check_budget,
    coordinate_grids,
)

DEFAULT_OUTCOME_BUDGET = 2**24
KINDS = ("iid", "moving_average", "finite_support")
FAMILIES = ("normal", "uniform", "rademacher", "pareto", "cauchy", "point_mass", "finite")
_IID_STREAM = 0
_INNOVATION_STREAM = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Margin:
    family: str
    params: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown distribution {self.family!r}")
        p = tuple(self.params)
        object.__setattr__(self, "params", p)
        nparams = {"normal": 2, "uniform": 2, "rademacher": 0, "pareto": 1,
                   "cauchy": (0, 2), "point_mass": 1, "finite": 2}[self.family]
        ok = len(p) in nparams if isinstance(nparams, tuple) else len(p) == nparams
        if not ok:
            raise ModelError(f"{self.family} takes {nparams} parameters, got {len(p)}")
        if self.family == "normal" and not p[1] > 0:
            raise ModelError("normal sigma must be positive")
        if self.family == "uniform" and not p[0] < p[1]:
            raise ModelError("uniform needs a < b")
        if self.family == "pareto" and not p[0] > 0:
            raise ModelError(f"pareto alpha must be positive, got {p[0]}")
        if self.family == "finite":
            vals, probs = np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float)
            if vals.shape != probs.shape or vals.ndim != 1 or vals.size == 0:
                raise ModelError("finite margin needs equal-length value and probability lists")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ModelError(f"finite probabilities must be nonnegative and sum to 1, got {probs.sum()!r}")
            object.__setattr__(self, "params", (tuple(vals.tolist()), tuple(probs.tolist())))

    @property
    def is_finite(self) -> bool:
        return self.family in ("rademacher", "point_mass", "finite")

    @property
    def heavy_tailed(self) -> bool:
        return self.family == "cauchy" or (self.family == "pareto" and self.params[0] <= 2)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        if self.family == "rademacher":
            return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
        if self.family == "point_mass":
            return np.array([float(self.params[0])]), np.array([1.0])
        if self.family == "finite":
            return np.array(self.params[0]), np.array(self.params[1])
        raise ModelError(f"{self.family} has no finite support")

    def quantile(self, u: np.ndarray) -> np.ndarray:
        f, p = self.family, self.params
        if f == "normal":
            return p[0] + p[1] * special.ndtri(u)
        if f == "uniform":
            return p[0] + (p[1] - p[0]) * u
        if f == "rademacher":
            return np.where(u < 0.5, -1.0, 1.0)
        if f == "pareto":
            return (1.0 - u) ** (-1.0 / p[0])
        if f == "cauchy":
            loc, scale = p if p else (0.0, 1.0)
            return loc + scale * np.tan(np.pi * (u - 0.5))
        if f == "point_mass":
            return np.full(np.shape(u), float(p[0]))
        vals, probs = self.support()
        edges = np.cumsum(probs)[:-1]
        return vals[np.searchsorted(edges, u, side="right")]

    def mean(self) -> float:
        f, p = self.family, self.params
        if f == "normal":
            return float(p[0])
        if f == "uniform":
            return (p[0] + p[1]) / 2
        if f == "pareto":
            return p[0] / (p[0] - 1) if p[0] > 1 else math.inf
        if f == "cauchy":
            return math.nan
        vals, probs = self.support()
        return float(vals @ probs)

    def std(self) -> float:
        f, p = self.family, self.params
        if f == "normal":
            return float(p[1])
        if f == "uniform":
            return (p[1] - p[0]) / math.sqrt(12)
        if f == "pareto":
            a = p[0]
            return math.sqrt(a / ((a - 1) ** 2 * (a - 2))) if a > 2 else math.inf
        if f == "cauchy":
            return math.nan
        vals, probs = self.support()
        m = vals @ probs
        return float(math.sqrt(((vals - m) ** 2) @ probs))

    def label(self) -> str:
        if self.family == "finite":
            return f"finite({list(self.params[0])},{list(self.params[1])})"
        return f"{self.family}({','.join(f'{x:g}' for x in self.params)})"


_MARGIN = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_margin(spec: str | dict | Margin) -> Margin:
    """Margin from ``"normal(0,1)"``, ``"rademacher"`` or a dict ``{family, params}``."""
    if isinstance(spec, Margin):
        return spec
    if isinstance(spec, dict):
        fam = spec.get("family")
        if fam is None:
            raise ModelError("margin table needs a 'family' key")
        if fam == "finite":
            return Margin("finite", (spec.get("values", ()), spec.get("probs", ())))
        return Margin(fam, tuple(spec.get("params", ())))
    m = _MARGIN.match(spec)
    if not m:
        raise ModelError(f"cannot parse distribution {spec!r}")
    fam, args = m.group(1), m.group(2)
    if fam not in FAMILIES:
        raise ModelError(f"unknown distribution {fam!r}")
    if fam == "finite":
        raise ModelError("finite margins need a table with 'values' and 'probs'")
    params = tuple(float(x) for x in args.split(",")) if args and args.strip() else ()
    return Margin(fam, params)


@dataclass(frozen=True)
class FieldModel:
    kind: str
    margin: Margin
    seed: int
    window: MultiIndex | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown field kind {self.kind!r}")
        if not isinstance(self.margin, Margin):
            object.__setattr__(self, "margin", parse_margin(self.margin))
        if not 0 <= int(self.seed) < 2**64:
            raise ModelError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))
        if self.kind == "moving_average":
            if self.window is None:
                raise ModelError("moving_average needs a window")
            object.__setattr__(self, "window", as_index(self.window))
        if self.kind == "finite_support" and not self.margin.is_finite:
            raise ModelError("finite_support needs a finite margin")

    @property
    def enumerable(self) -> bool:
        return self.margin.is_finite

    def with_seed(self, seed: int) -> "FieldModel":
        return FieldModel(self.kind, self.margin, seed, self.window)

    def describe(self) -> dict:
        out = {"kind": self.kind, "margin": self.margin.label(), "seed": self.seed}
        if self.window is not None:
            out["window"] = list(self.window.coords)
        return out


def iid(margin: str | Margin, seed: int = 0) -> FieldModel:
    return FieldModel("iid", parse_margin(margin), seed)


def _box_sums(arr: np.ndarray, window: Sequence[int], lead: int) -> np.ndarray:
    """Sums over trailing windows along the last ``len(window)`` axes."""
    out = arr
    for i, w in enumerate(window):
        ax = lead + i
        c = np.cumsum(out, axis=ax)
        pad = np.zeros_like(np.take(c, [0], axis=ax))
        c = np.concatenate([pad, c], axis=ax)
        L = out.shape[ax] - w + 1
        out = np.take(c, np.arange(w, w + L), axis=ax) - np.take(c, np.arange(L), axis=ax)
    return out


def generate_batch(model: FieldModel, n: MultiIndex | Sequence[int], replicates,
                   budget: int = DEFAULT_CELL_BUDGET) -> np.ndarray:
    """Fields for a batch of replicate ids; shape ``(len(replicates), *n)``."""
    n = as_index(n)
    reps = np.atleast_1d(np.asarray(replicates, dtype=np.int64))
    check_budget(MultiIndex(n.size() * len(reps)), budget)
    if model.kind in ("iid", "finite_support"):
        u = _rng.uniforms(model.seed, _IID_STREAM, reps, coordinate_grids(n))
        return model.margin.quantile(u)
    w = model.window
    if w.d != n.d:
        raise ModelError(f"window {w} does not match dimension {n.d}")
    ext = [np.arange(2 - wi, k + 1).reshape([-1 if j == i else 1 for j in range(n.d)])
           for i, (k, wi) in enumerate(zip(n.coords, w.coords))]
    eta = model.margin.quantile(_rng.uniforms(model.seed, _INNOVATION_STREAM, reps, ext))
    return _box_sums(eta, w.coords, 1) / math.sqrt(w.size())


def generate(model: FieldModel, n: MultiIndex | Sequence[int], replicate: int = 0) -> LatticeTable:
    """One realisation over ``[1, n]``; a pure function of (model, n, replicate)."""
    n = as_index(n)
    return LatticeTable(generate_batch(model, n, [replicate])[0], n)


@dataclass
class OutcomeSpace:
    shape: MultiIndex
    support: np.ndarray
    support_probs: np.ndarray
    values: np.ndarray      # (K, *shape) field values per outcome
    probs: np.ndarray       # (K,)
    order: str = "row-major cells, last cell fastest"

    def __len__(self) -> int:
        return len(self.probs)


def enumerate_outcomes(model: FieldModel, n: MultiIndex | Sequence[int],
                       budget: int = DEFAULT_OUTCOME_BUDGET) -> OutcomeSpace:
    """Every joint outcome on ``[1, n]`` with its exact probability.

    Moving averages are enumerated over their innovation cells, so the count
    is ``(support size)^(innovation cells)``.
    """
    n = as_index(n)
    if not model.margin.is_finite:
        raise ModelError(f"{model.margin.label()} is not a finite margin; cannot enumerate")
    vals, probs = model.margin.support()
    keep = probs > 0
    vals, probs = vals[keep], probs[keep]
    s = len(vals)
    if model.kind == "moving_average":
        w = model.window
        cells_shape = tuple(k + wi - 1 for k, wi in zip(n.coords, w.coords))
    else:
        cells_shape = n.coords
    ncells = math.prod(cells_shape)
    total = s**ncells
    if total > budget:
        raise ModelError(f"{total} outcomes exceed the enumeration budget of {budget}")
    check_budget(MultiIndex(max(1, total * ncells)), DEFAULT_CELL_BUDGET * 4)
    k = np.arange(total, dtype=np.int64)[:, None]
    idx = (k // s ** np.arange(ncells - 1, -1, -1, dtype=np.int64)) % s
    cell_vals = vals[idx].reshape((total,) + cells_shape)
    p = np.prod(probs[idx], axis=1) if ncells else np.ones(1)
    if model.kind == "moving_average":
        cell_vals = _box_sums(cell_vals, model.window.coords, 1) / math.sqrt(model.window.size())
    return OutcomeSpace(n, vals, probs, cell_vals, p)
