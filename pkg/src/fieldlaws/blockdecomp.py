"""Deterministic reconstruction of the block argument behind the 4^d transfer.

For ``c > 1`` and a product-type ``b`` with factors normalised to start at 1,
cell ``s`` goes to block ``i`` when ``c^(i_j) <= b_j(s_j) < c^(i_j + 1)`` for
every coordinate. :func:`verify_chain` evaluates every link of the resulting
chain of bounds (scaled by ``C eps^-r``) and reports the slack of each.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .dsequences import DSequence, normalized
from .lattice import MultiIndex, as_index, cumulate

REL_SLACK = 1e-12


class BlockError(ValueError):
    pass


def levels(values: np.ndarray, c: float) -> np.ndarray:
    """Integer ``i >= 0`` with ``c^i <= v < c^(i+1)`` for each ``v >= 1``."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 1):
        raise BlockError(f"values below 1 cannot be assigned a level (min {v.min()})")
    lv = np.floor(np.log(v) / math.log(c)).astype(np.int64)
    lv = np.maximum(lv, 0)
    # repair rounding in the logarithm against the exact power comparison
    for _ in range(3):
        lo = c ** lv.astype(np.float64)
        lv = np.where(lo > v, lv - 1, lv)
        hi = c ** (lv + 1).astype(np.float64)
        lv = np.where(hi <= v, lv + 1, lv)
    return lv


@dataclass
class BlockPartition:
    c: float
    shape: MultiIndex
    b1: float                                 # product of the factors' first values
    factor_values: list[np.ndarray]           # normalised b_j(1..n_j)
    level: list[np.ndarray]                   # block index of each coordinate value
    blocks: dict[tuple[int, ...], list[MultiIndex]]
    k_n: tuple[int, ...]
    corners: dict[tuple[int, ...], MultiIndex]   # m_{i,n}: coordinate-wise max of each block

    @property
    def d(self) -> int:
        return self.shape.d

    @property
    def block_grid(self) -> tuple[int, ...]:
        return tuple(k + 1 for k in self.k_n)

    def block_of(self, s: MultiIndex | Sequence[int]) -> tuple[int, ...]:
        s = as_index(s)
        return tuple(int(self.level[j][s[j] - 1]) for j in range(self.d))

    def corner(self, i: Sequence[int]) -> tuple[int, ...]:
        """``m_{i,n}``, or all zeros for an empty block."""
        m = self.corners.get(tuple(i))
        return m.coords if m is not None else (0,) * self.d

    def index_table(self) -> np.ndarray:
        """Flat block id (row-major over the block grid) for every cell of ``[1, n]``."""
        ids = np.zeros(self.shape.coords, dtype=np.int64)
        for j in range(self.d):
            stride = math.prod(self.block_grid[j + 1:])
            shp = [1] * self.d
            shp[j] = self.shape[j]
            ids = ids + self.level[j].reshape(shp) * stride
        return ids

    def rows(self) -> list[tuple[MultiIndex, tuple[int, ...]]]:
        """``(s, block index)`` for every cell, in lexicographic cell order."""
        out = []
        for t in itertools.product(*(range(1, k + 1) for k in self.shape.coords)):
            s = MultiIndex(t)
            out.append((s, self.block_of(s)))
        return out


def build_partition(b: DSequence, n: MultiIndex | Sequence[int], c: float,
                    normalize: bool = True) -> BlockPartition:
    """Split ``[1, n]`` into the level blocks of ``b`` for base ``c``.

    With ``normalize`` (the default) each factor is first divided by its value
    at 1; otherwise factors below 1 are an error.
    """
    if not c > 1:
        raise BlockError(f"c must exceed 1, got {c}")
    n = as_index(n)
    if not b.product_type:
        raise BlockError(f"{b.name} is not of product type")
    if normalize:
        bn, b1 = normalized(b, n.d)
    else:
        bn, b1 = b, 1.0
    fvals = [bn.factor_values(j, n[j]) for j in range(n.d)]
    for j, fv in enumerate(fvals):
        if np.any(fv < 1):
            raise BlockError(f"factor {j} has values below 1; normalise b first")
        if np.any(np.diff(fv) < 0):
            raise BlockError(f"factor {j} is not nondecreasing")
    lv = [levels(fv, c) for fv in fvals]
    groups = []
    for j in range(n.d):
        g: dict[int, list[int]] = {}
        for s, i in enumerate(lv[j], start=1):
            g.setdefault(int(i), []).append(s)
        groups.append(g)
    blocks: dict[tuple[int, ...], list[MultiIndex]] = {}
    corners: dict[tuple[int, ...], MultiIndex] = {}
    for combo in itertools.product(*(sorted(g.items()) for g in groups)):
        idx = tuple(i for i, _ in combo)
        blocks[idx] = [MultiIndex(t) for t in itertools.product(*(members for _, members in combo))]
        corners[idx] = MultiIndex(max(members) for _, members in combo)
    k_n = tuple(int(max(l)) for l in lv)
    return BlockPartition(float(c), n, b1, fvals, lv, blocks, k_n, corners)


def _a_table(a, n: MultiIndex) -> np.ndarray:
    if isinstance(a, DSequence):
        t = a.on_rectangle(n)
    else:
        t = np.asarray(a)
        if t.shape != n.coords:
            raise BlockError(f"a table has shape {t.shape}, expected {n.coords}")
    if np.any(t < 0):
        raise BlockError("a must be nonnegative")
    return t


def _dense_block_sums(a_tab: np.ndarray, p: BlockPartition) -> np.ndarray:
    dtype = np.int64 if a_tab.dtype.kind in "iu" else np.float64
    D = np.zeros(math.prod(p.block_grid), dtype=dtype)
    if dtype == np.int64:
        np.add.at(D, p.index_table().ravel(), a_tab.ravel())
    else:
        # per-block compensated sums
        ids = p.index_table().ravel()
        vals = a_tab.ravel()
        order = np.argsort(ids, kind="stable")
        ids, vals = ids[order], vals[order]
        cuts = np.flatnonzero(np.diff(ids)) + 1
        for blk, chunk in zip(ids[np.r_[0, cuts]], np.split(vals, cuts)):
            D[blk] = math.fsum(chunk)
    return D.reshape(p.block_grid)


def block_sums(a, p: BlockPartition) -> dict[tuple[int, ...], float]:
    """``D_{i,n}`` for every block index ``i <= k_n``; empty blocks give 0."""
    D = _dense_block_sums(_a_table(a, p.shape), p)
    return {tuple(int(x) for x in i): D[i].item() for i in np.ndindex(D.shape)}


@dataclass
class StepResult:
    name: str
    ok: bool
    slack: float
    witness: str = ""


@dataclass
class ChainReport:
    c: float
    r: float
    shape: MultiIndex
    steps: list[StepResult]
    bounds: dict[str, float]
    factor: float                       # (c^r / (1 - c^-r))^d
    final_ratio: float                  # first chain bound / last chain bound
    b1: float
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.ok for s in self.steps)

    def failing(self) -> list[StepResult]:
        return [s for s in self.steps if not s.ok]

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "r": self.r,
            "n": list(self.shape.coords),
            "passed": self.passed,
            "factor": self.factor,
            "final_ratio": self.final_ratio,
            "b1": self.b1,
            "steps": [{"name": s.name, "ok": s.ok, "slack": s.slack, "witness": s.witness}
                      for s in self.steps],
            "bounds": self.bounds,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _leq(lhs: float, rhs: float) -> tuple[bool, float]:
    """``lhs <= rhs`` up to the relative slack; returns (ok, rhs - lhs)."""
    slack = rhs - lhs
    return slack >= -REL_SLACK * max(abs(lhs), abs(rhs)), float(slack)


def _eq(lhs: float, rhs: float) -> tuple[bool, float]:
    ok1, s = _leq(lhs, rhs)
    ok2, _ = _leq(rhs, lhs)
    return ok1 and ok2, float(s)


def hr_factor(c: float, r: float) -> float:
    """``c^r / (1 - c^-r)``."""
    if c <= 1:
        return math.inf
    return c**r / (1.0 - c ** (-r))


def verify_chain(a, b: DSequence, n: MultiIndex | Sequence[int], c: float, r: float) -> ChainReport:
    """Evaluate each inequality of the block argument on ``[1, n]``.

    Bounds are reported in units of ``C eps^-r``:

    ``first``   sum_i c^-r|i| sum_{m <= m_{i,n}} a_m        (after applying side (i))
    ``grouped`` sum_i c^-r|i| sum_{s <= i} D_s              (dominance)
    ``swapped`` sum_m D_m sum_{m <= i <= k_n} c^-r|i|       (same sum reordered)
    ``geom``    sum_m D_m prod_j c^-r m_j / (1 - c^-r)      (geometric tails)
    ``shifted`` F^(1/d)... written as F sum_m D_m prod_j c^-r(m_j+1)
    ``blocks``  F sum_m sum_{s in A_m} a_s / b_s^r          (level bound on b)
    ``final``   F sum_{s <= n} a_s / b_s^r

    where ``F = (c^r / (1 - c^-r))^d`` and ``b`` is the normalised sequence.
    """
    if not r > 0:
        raise BlockError(f"r must be positive, got {r}")
    n = as_index(n)
    p = build_partition(b, n, c)
    d = n.d
    a_tab = _a_table(a, n)
    steps: list[StepResult] = []

    # (1) partition: every cell in exactly one block, membership predicate holds
    count = sum(len(v) for v in p.blocks.values())
    seen = set()
    dup = None
    for blk in p.blocks.values():
        for s in blk:
            if s.coords in seen:
                dup = s
            seen.add(s.coords)
    bad = []
    for j in range(d):
        lo = c ** p.level[j].astype(np.float64)
        hi = c ** (p.level[j] + 1).astype(np.float64)
        fv = p.factor_values[j]
        miss = np.flatnonzero(~((lo <= fv) & (fv < hi)))
        if miss.size:
            bad.append(f"coord {j} value index {miss[0] + 1}")
        if np.any(np.diff(p.level[j]) < 0):
            bad.append(f"coord {j} levels decrease")
    ok = count == n.size() and len(seen) == n.size() and dup is None and not bad
    steps.append(StepResult("partition", ok, float(n.size() - count),
                            "; ".join(bad) + (f" duplicate {dup}" if dup else "")))

    # (2) dominance per nonempty block
    A = cumulate(a_tab)
    D = _dense_block_sums(a_tab, p)
    Dsum = cumulate(D)
    worst = (True, math.inf, "")
    first_terms = np.zeros(p.block_grid)
    for i, m in p.corners.items():
        lhs = A[tuple(x - 1 for x in m.coords)]
        rhs = Dsum[i]
        first_terms[i] = lhs
        ok_i, sl = _leq(float(lhs), float(rhs))
        if not ok_i or sl < worst[1]:
            worst = (ok_i and worst[0], sl, f"block {i}" if not ok_i else worst[2])
    steps.append(StepResult("dominance", worst[0], worst[1], worst[2]))

    # (3) geometric tails per coordinate
    q = c ** (-r)
    ok3, min3, wit3 = True, math.inf, ""
    for j, k in enumerate(p.k_n):
        powers = q ** np.arange(k + 1, dtype=np.float64)
        tails = np.cumsum(powers[::-1])[::-1]
        for mj in range(k + 1):
            ok_m, sl = _leq(float(tails[mj]), q**mj / (1 - q))
            min3 = min(min3, sl)
            if not ok_m:
                ok3, wit3 = False, f"coord {j} m_j={mj}"
    steps.append(StepResult("geometric_tail", ok3, min3, wit3))

    # (4) c^(m_j+1) > b_j(s_j) for s in A_m, hence prod_j c^(r(m_j+1)) >= b_s^r
    ok4, min4, wit4 = True, math.inf, ""
    for j in range(d):
        top = c ** ((p.level[j] + 1).astype(np.float64) * r)
        sl = top - p.factor_values[j] ** r
        min4 = min(min4, float(sl.min()))
        if np.any(sl < -REL_SLACK * top):
            ok4, wit4 = False, f"coord {j} index {int(np.argmin(sl)) + 1}"
    b_tab = np.ones(n.coords)
    for j in range(d):
        shp = [1] * d
        shp[j] = n[j]
        b_tab = b_tab * p.factor_values[j].reshape(shp)
    up = np.ones(n.coords)
    for j in range(d):
        shp = [1] * d
        shp[j] = n[j]
        up = up * (c ** ((p.level[j] + 1).astype(np.float64) * r)).reshape(shp)
    prod_sl = up - b_tab**r
    if np.any(prod_sl < -REL_SLACK * up):
        ok4, wit4 = False, wit4 or "product bound"
    steps.append(StepResult("level_bound", ok4, min(min4, float(prod_sl.min())), wit4))

    # assemble the chain
    G = np.ones(p.block_grid)
    T = np.ones(p.block_grid)
    Gshift = np.ones(p.block_grid)
    for j, k in enumerate(p.k_n):
        shp = [1] * d
        shp[j] = k + 1
        powers = q ** np.arange(k + 1, dtype=np.float64)
        G = G * powers.reshape(shp)
        T = T * np.cumsum(powers[::-1])[::-1].reshape(shp)
        Gshift = Gshift * (q ** np.arange(1, k + 2, dtype=np.float64)).reshape(shp)
    F = hr_factor(c, r) ** d
    Df = D.astype(np.float64)
    terms = a_tab / b_tab**r
    Db = np.zeros(math.prod(p.block_grid))
    np.add.at(Db, p.index_table().ravel(), terms.ravel())
    Db = Db.reshape(p.block_grid)
    bounds = {
        "first": math.fsum((G * first_terms).ravel()),
        "grouped": math.fsum((G * Dsum).ravel()),
        "swapped": math.fsum((Df * T).ravel()),
        "geom": math.fsum((Df * G).ravel()) / (1 - q) ** d,
        "shifted": F * math.fsum((Df * Gshift).ravel()),
        "blocks": F * math.fsum(Db.ravel()),
        "final": F * math.fsum(terms.ravel()),
    }
    links = [("first<=grouped", _leq), ("grouped=swapped", _eq), ("swapped<=geom", _leq),
             ("geom=shifted", _eq), ("shifted<=blocks", _leq), ("blocks=final", _eq)]
    keys = list(bounds)
    for (name, rel), k0, k1 in zip(links, keys, keys[1:]):
        ok_l, sl = rel(bounds[k0], bounds[k1])
        steps.append(StepResult(name, ok_l, sl, "" if ok_l else f"{k0}={bounds[k0]!r} {k1}={bounds[k1]!r}"))

    final = bounds["final"]
    ratio = bounds["first"] / final if final > 0 else (0.0 if bounds["first"] == 0 else math.inf)
    notes = []
    if p.b1 != 1.0:
        notes.append(f"b normalised by b_1 = {p.b1!r}; bounds use b / b_1, so the level eps "
                     f"becomes eps * b_1 and sums of a/b^r scale by b_1^r")
    return ChainReport(float(c), float(r), n, steps, bounds, F, ratio, p.b1, notes)


def optimal_c(r: float) -> tuple[float, float]:
    """Minimise ``c^r / (1 - c^-r)`` over ``c > 1``; returns ``(c_star, min_value)``."""
    if not r > 0:
        raise BlockError(f"r must be positive, got {r}")

    def f(c):
        return hr_factor(c, r)

    hi = 2.0
    while f(2 * hi) <= f(hi):
        hi *= 2
    res = optimize.minimize_scalar(f, bounds=(1.0, 2 * hi), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": 500})
    return float(res.x), float(res.fun)
