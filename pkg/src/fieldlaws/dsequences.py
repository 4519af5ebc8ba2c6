"""Real families indexed by the positive lattice.

A :class:`DSequence` wraps a vectorised evaluator ``f(n_1, ..., n_d)`` and a
set of declared properties. Product-type sequences also carry one factor per
coordinate, ``b_n = prod_i b^(i)(n_i)``, which lets rectangle tables be built
as outer products and lets the normalizer construction work coordinate-wise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import (
    DEFAULT_CELL_BUDGET,
    MultiIndex,
    RectangleSchedule,
    as_index,
    check_budget,
    coordinate_grids,
    cumulate,
    read_at,
)

Factor = Callable[[np.ndarray], np.ndarray]

CONVERGED = "converged-at-tolerance"
DIVERGING = "diverging"
INCONCLUSIVE = "inconclusive"

DEFAULT_TOL = 1e-6
DEFAULT_GUARD = 1e12
# local decay exponent (in schedule steps) at or below which increments are
# treated as non-summable
MIN_DECAY_EXPONENT = 1.25


class SequenceError(ValueError):
    pass


class DSequence:
    """A d-sequence with declared flags.

    ``factors`` is either ``None`` (general sequence), a single 1-d callable
    used for every coordinate, or a tuple with one callable per coordinate.
    """

    def __init__(self, func: Callable[..., np.ndarray] | None = None, *,
                 factors: Factor | Sequence[Factor] | None = None,
                 name: str = "", d: int | None = None,
                 nonnegative: bool = False, positive: bool = False,
                 nondecreasing: bool = False, unbounded: bool = False):
        if func is None and factors is None:
            raise SequenceError("need an evaluator or factors")
        if isinstance(factors, (list, tuple)):
            factors = tuple(factors)
            if d is not None and d != len(factors):
                raise SequenceError(f"{len(factors)} factors for d={d}")
            d = len(factors)
        self._func = func
        self._factors = factors
        self.name = name
        self.d = d
        self.positive = positive
        self.nonnegative = nonnegative or positive
        self.nondecreasing = nondecreasing
        self.unbounded = unbounded

    @property
    def product_type(self) -> bool:
        return self._factors is not None

    def factor(self, i: int) -> Factor:
        if self._factors is None:
            raise SequenceError(f"{self.name or 'sequence'} is not of product type")
        if isinstance(self._factors, tuple):
            return self._factors[i]
        return self._factors

    def factor_values(self, i: int, length: int) -> np.ndarray:
        k = np.arange(1, length + 1)
        return np.broadcast_to(np.asarray(self.factor(i)(k), dtype=np.float64), k.shape).copy()

    def _check_dim(self, d: int) -> None:
        if self.d is not None and self.d != d:
            raise SequenceError(f"{self.name or 'sequence'} is {self.d}-dimensional, got d={d}")

    def on_rectangle(self, n: MultiIndex | Sequence[int],
                     budget: int = DEFAULT_CELL_BUDGET) -> np.ndarray:
        """Values over ``[1, n]`` as a dense array of shape ``n``."""
        n = as_index(n)
        self._check_dim(n.d)
        check_budget(n, budget)
        if self._factors is not None:
            out = np.ones(n.coords)
            for i, k in enumerate(n.coords):
                shape = [1] * n.d
                shape[i] = k
                out = out * self.factor_values(i, k).reshape(shape)
            return out
        vals = np.asarray(self._func(*coordinate_grids(n)), dtype=np.float64)
        return np.broadcast_to(vals, n.coords).copy()

    def __call__(self, m: MultiIndex | Sequence[int]) -> float:
        m = as_index(m)
        self._check_dim(m.d)
        if self._factors is not None:
            return math.prod(float(np.asarray(self.factor(i)(np.asarray([c]))).ravel()[0])
                             for i, c in enumerate(m.coords))
        return float(np.asarray(self._func(*[np.asarray([c]) for c in m.coords])).ravel()[0])

    def scaled(self, lam: float) -> "DSequence":
        """``lam * self``; keeps product type by scaling the first factor."""
        if lam <= 0:
            raise SequenceError("scale must be positive")
        flags = dict(nonnegative=self.nonnegative, positive=self.positive,
                     nondecreasing=self.nondecreasing, unbounded=self.unbounded)
        if self._factors is not None:
            d = self.d
            if d is None:
                base = self._factors
                first = lambda k, f=base: lam * np.asarray(f(k), dtype=np.float64)
                return _IsoScaled(base, first, lam, name=f"{lam}*{self.name}", **flags)
            facs = list(self._factors)
            f0 = facs[0]
            facs[0] = lambda k, f=f0: lam * np.asarray(f(k), dtype=np.float64)
            return DSequence(factors=facs, name=f"{lam}*{self.name}", **flags)
        f = self._func
        return DSequence(lambda *g: lam * np.asarray(f(*g), dtype=np.float64),
                         name=f"{lam}*{self.name}", d=self.d, **flags)

    def check(self, n: MultiIndex | Sequence[int], tol: float = 0.0) -> None:
        """Spot-check the declared flags over ``[1, n]``; raise on a violation."""
        n = as_index(n)
        vals = self.on_rectangle(n)
        if not np.all(np.isfinite(vals)):
            raise SequenceError(f"{self.name}: non-finite values on [1, {n}]")
        if self.positive and np.any(vals <= 0):
            raise SequenceError(f"{self.name}: declared positive but has value {vals.min()}")
        if self.nonnegative and np.any(vals < 0):
            raise SequenceError(f"{self.name}: declared nonnegative but has value {vals.min()}")
        if self.nondecreasing:
            for ax in range(n.d):
                step = np.diff(vals, axis=ax)
                if np.any(step < -tol * np.abs(vals).max()):
                    raise SequenceError(f"{self.name}: declared nondecreasing, decreases along axis {ax}")

    def __repr__(self) -> str:
        kind = "product" if self.product_type else "general"
        return f"DSequence({self.name or '?'}, {kind})"


class _IsoScaled(DSequence):
    """Dimension-generic product sequence whose first factor is scaled."""

    def __init__(self, base: Factor, first: Factor, lam: float, **kw):
        super().__init__(factors=base, **kw)
        self._first = first

    def factor(self, i: int) -> Factor:
        return self._first if i == 0 else self._factors  # type: ignore[return-value]


def size(n: MultiIndex | Sequence[int]) -> int:
    """Number of lattice points in ``[1, n]``."""
    return as_index(n).size()


def logplus(x) -> np.ndarray:
    """``max(1, ln x)``."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(1.0, np.log(x))


def logplus_weight(n: MultiIndex | Sequence[int]) -> float:
    """``prod_i max(1, ln n_i)``; always at least 1."""
    return float(math.prod(max(1.0, math.log(c)) for c in as_index(n).coords))


def _ident(k):
    return np.asarray(k, dtype=np.float64)


def _ones(k):
    return np.ones(np.shape(k))


def size_seq() -> DSequence:
    return DSequence(factors=_ident, name="size", positive=True, nondecreasing=True, unbounded=True)


def logplus_seq() -> DSequence:
    return DSequence(factors=logplus, name="logplus", positive=True, nondecreasing=True, unbounded=True)


def constant_seq(v: float = 1.0) -> DSequence:
    if v < 0:
        # a negative constant is not product type in any useful sense
        return DSequence(lambda *g: np.full(np.broadcast(*g).shape, v), name=f"constant:{v}",
                         nondecreasing=True)
    if v == 0:
        return DSequence(lambda *g: np.zeros(np.broadcast(*g).shape), name="constant:0",
                         nonnegative=True, nondecreasing=True)
    seq = DSequence(factors=_ones, name=f"constant:{v:g}", positive=True, nondecreasing=True)
    return seq if v == 1 else seq.scaled(v)


def power_seq(p: float) -> DSequence:
    """``<n>^p``."""
    return DSequence(factors=lambda k: np.asarray(k, dtype=np.float64) ** p, name=f"power:{p:g}",
                     positive=True, nondecreasing=p >= 0, unbounded=p > 0)


def geometric_seq(q: float) -> DSequence:
    """``prod_i q^(n_i)``."""
    if q <= 0:
        raise SequenceError("geometric ratio must be positive")
    return DSequence(factors=lambda k: float(q) ** np.asarray(k, dtype=np.float64),
                     name=f"geometric:{q:g}", positive=True, nondecreasing=q >= 1, unbounded=q > 1)


def make_product(factors: Sequence[DSequence | Factor], normalize: bool = False,
                 check_upto: int = 64) -> DSequence:
    """Product-type sequence ``b_n = prod_i f_i(n_i)`` from 1-d factors.

    Flags are the conjunction of the factors' flags; plain callables count as
    positive only. With ``normalize`` each factor is divided by its value at 1.
    """
    if not factors:
        raise SequenceError("need at least one factor")
    fns: list[Factor] = []
    flags = dict(positive=True, nondecreasing=True, unbounded=True)
    names = []
    for i, f in enumerate(factors):
        if isinstance(f, DSequence):
            if f.d not in (None, 1):
                raise SequenceError(f"factor {i} is {f.d}-dimensional")
            fn = f.factor(0) if f.product_type else (lambda k, s=f: np.asarray(s._func(k)))
            flags["nondecreasing"] &= f.nondecreasing
            flags["unbounded"] &= f.unbounded
            names.append(f.name)
        else:
            fn = f
            flags["nondecreasing"] = False
            flags["unbounded"] = False
            names.append(getattr(f, "__name__", "f"))
        vals = np.asarray(fn(np.arange(1, check_upto + 1)), dtype=np.float64)
        if np.any(~(vals > 0)):
            raise SequenceError(f"factor {i} has a nonpositive value {vals.min()}")
        if normalize:
            first = float(vals.ravel()[0])
            fn = (lambda k, g=fn, c=first: np.asarray(g(k), dtype=np.float64) / c)
        fns.append(fn)
    return DSequence(factors=tuple(fns), name="product:[" + ",".join(names) + "]", **flags)


def from_table(values, name: str = "table") -> DSequence:
    """General sequence read from a dense array over ``[1, shape]``; zero outside."""
    t = np.asarray(values, dtype=np.float64)

    def f(*grids):
        idx = np.broadcast_arrays(*[np.asarray(g) - 1 for g in grids])
        inside = np.all([(i >= 0) & (i < k) for i, k in zip(idx, t.shape)], axis=0)
        safe = tuple(np.clip(i, 0, k - 1) for i, k in zip(idx, t.shape))
        return np.where(inside, t[safe], 0.0)

    return DSequence(f, name=name, d=t.ndim, nonnegative=bool(np.all(t >= 0)))


def product_from_tables(tables: Sequence[Sequence[float]], name: str = "table") -> DSequence:
    """Product-type sequence whose factors are lookup tables (last value held beyond)."""
    fns = []
    ok = dict(positive=True, nondecreasing=True)
    for t in tables:
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise SequenceError("factor tables must be nonempty 1-d arrays")
        ok["positive"] &= bool(np.all(t > 0))
        ok["nondecreasing"] &= bool(np.all(np.diff(t) >= 0))
        fns.append(lambda k, t=t: t[np.clip(np.asarray(k), 1, t.size) - 1])
    return DSequence(factors=tuple(fns), name=name, **ok)


def normalized(b: DSequence, d: int) -> tuple[DSequence, float]:
    """Divide each factor by its first value; returns the sequence and ``b_1``."""
    b1 = 1.0
    facs = []
    for i in range(d):
        first = float(b.factor_values(i, 1)[0])
        if first <= 0:
            raise SequenceError(f"factor {i} of {b.name} is not positive at 1")
        b1 *= first
        facs.append(lambda k, g=b.factor(i), c=first: np.asarray(g(k), dtype=np.float64) / c)
    out = DSequence(factors=tuple(facs), name=f"{b.name}/b_1", positive=b.positive,
                    nondecreasing=b.nondecreasing, unbounded=b.unbounded)
    return out, b1


# ---- named families -------------------------------------------------------

_FAMILY = re.compile(r"^\s*([a-z_]+)\s*(?::\s*(.*?))?\s*$")


def _split_top(s: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_family(spec: str) -> DSequence:
    """Resolve a family name such as ``"power:-1"`` or ``"product:[size,geometric:2]"``."""
    m = _FAMILY.match(spec)
    if not m:
        raise SequenceError(f"cannot parse sequence family {spec!r}")
    kind, arg = m.group(1), m.group(2)
    try:
        if kind == "size":
            return size_seq()
        if kind == "logplus":
            return logplus_seq()
        if kind == "constant":
            return constant_seq(float(arg) if arg else 1.0)
        if kind == "power":
            return power_seq(float(arg))
        if kind == "geometric":
            return geometric_seq(float(arg))
        if kind == "product":
            if not arg or not (arg.startswith("[") and arg.endswith("]")):
                raise SequenceError(f"product needs a bracketed list: {spec!r}")
            return make_product([parse_family(p) for p in _split_top(arg[1:-1])])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SequenceError):
            raise
        raise SequenceError(f"bad parameter in {spec!r}: {exc}") from None
    raise SequenceError(f"unknown sequence family {kind!r}")


# ---- series ---------------------------------------------------------------

@dataclass
class SeriesVerdict:
    partial_sum: float
    horizon: MultiIndex
    tail_increment: float
    verdict: str
    partial_sums: list[float] = field(default_factory=list)
    increments: list[float] = field(default_factory=list)
    decay_exponent: float | None = None
    tol: float = DEFAULT_TOL
    heuristic: bool = True

    def to_dict(self) -> dict:
        return {
            "partial_sum": self.partial_sum,
            "horizon": list(self.horizon.coords),
            "tail_increment": self.tail_increment,
            "verdict": self.verdict,
            "partial_sums": self.partial_sums,
            "increments": self.increments,
            "decay_exponent": self.decay_exponent,
            "tol": self.tol,
            "note": "horizon-based heuristic, not a convergence proof",
        }


def term_table(a: DSequence, b: DSequence, r: float, n: MultiIndex) -> np.ndarray:
    """``a_m / b_m^r`` over ``[1, n]``."""
    av = a.on_rectangle(n)
    bv = b.on_rectangle(n)
    if np.any(av < 0):
        raise SequenceError(f"{a.name} has negative terms")
    if np.any(bv <= 0):
        raise SequenceError(f"{b.name} has nonpositive terms")
    return av / bv**r


def classify(partial_sums: Sequence[float], tol: float = DEFAULT_TOL,
             guard: float = DEFAULT_GUARD) -> tuple[str, float, list[float], float | None]:
    """Verdict from partial sums along a schedule: (verdict, rel. increment, increments, exponent)."""
    P = [float(p) for p in partial_sums]
    inc = [b - a for a, b in zip(P, P[1:])]
    last = P[-1]
    if not math.isfinite(last) or abs(last) > guard:
        return DIVERGING, math.inf, inc, None
    if not inc:
        return INCONCLUSIVE, math.inf, inc, None
    rel = 0.0 if inc[-1] == 0 else inc[-1] / abs(last)
    exponent = None
    if len(inc) >= 2 and inc[-1] > 0:
        if inc[-1] >= inc[-2] * (1 - 1e-12):
            return DIVERGING, rel, inc, exponent
        J = len(inc)
        exponent = math.log(inc[-2] / inc[-1]) / math.log(J / (J - 1))
        if exponent <= MIN_DECAY_EXPONENT:
            return DIVERGING, rel, inc, exponent
    if rel < tol:
        return CONVERGED, rel, inc, exponent
    return INCONCLUSIVE, rel, inc, exponent


def series_sum(a: DSequence, b: DSequence, r: float, horizons: RectangleSchedule,
               tol: float = DEFAULT_TOL, guard: float = DEFAULT_GUARD) -> SeriesVerdict:
    """Partial sums of ``a_n / b_n^r`` over a growing chain of rectangles.

    The verdict is a heuristic: converged when the last relative increment is
    below ``tol``; diverging when increments stop shrinking, shrink no faster
    than ``1/step`` (``MIN_DECAY_EXPONENT``), or the sum passes ``guard``.
    """
    if not r > 0:
        raise SequenceError(f"exponent r must be positive, got {r}")
    top = horizons.last
    S = cumulate(term_table(a, b, r, top))
    P = [float(read_at(S, h)) for h in horizons]
    verdict, rel, inc, expo = classify(P, tol, guard)
    return SeriesVerdict(P[-1], top, rel, verdict, P, inc, expo, tol)


def dyadic_to(horizon: MultiIndex) -> RectangleSchedule:
    """``(min(2^j, h_i))_i`` for ``j = 0 .. ceil(log2 max h)``."""
    horizon = as_index(horizon)
    top = max(horizon.coords)
    pts: list[MultiIndex] = []
    j = 0
    while True:
        p = MultiIndex(min(2**j, h) for h in horizon.coords)
        if not pts or pts[-1] != p:
            pts.append(p)
        if 2**j >= top:
            break
        j += 1
    return RectangleSchedule(tuple(pts))


# ---- normalizer construction ----------------------------------------------

@dataclass
class BetaReport:
    beta: DSequence
    horizon: MultiIndex
    chain: list[int]             # largest coordinate of each dyadic diagonal point
    ratio: np.ndarray            # beta_n / b_n along the dyadic diagonal
    knee: int                    # chain position from which ratio is nonincreasing
    first_quarter_mean: float
    last_quarter_mean: float
    quarter_drop: float          # first-quarter mean / last-quarter mean
    partial_sums: np.ndarray     # sum of a / beta^r along the unit-step diagonal
    final_increment: float       # relative increment over the last unit step
    dyadic_increment: float      # last dyadic-step relative increment
    bound: float
    input_series: SeriesVerdict
    flags_ok: bool

    def to_dict(self) -> dict:
        return {
            "horizon": list(self.horizon.coords),
            "knee": self.knee,
            "ratio_first": float(self.ratio[0]),
            "ratio_last": float(self.ratio[-1]),
            "first_quarter_mean": self.first_quarter_mean,
            "last_quarter_mean": self.last_quarter_mean,
            "quarter_drop": self.quarter_drop,
            "partial_sum": float(self.partial_sums[-1]),
            "final_increment": self.final_increment,
            "dyadic_increment": self.dyadic_increment,
            "bound": self.bound,
            "flags_ok": self.flags_ok,
            "input_series": self.input_series.to_dict(),
            "note": "finite-horizon diagnostics, not a proof",
        }


def _table_factor(values: np.ndarray, tail: Factor) -> Factor:
    """1-d factor from a lookup table on ``1..len(values)``, ``tail`` beyond."""
    values = np.asarray(values, dtype=np.float64)
    H = len(values)

    def f(k):
        k = np.asarray(k)
        inside = np.clip(k, 1, H) - 1
        out = values[inside]
        if np.any(k > H):
            out = np.where(k > H, np.maximum(values[-1], tail(np.maximum(k, H))), out)
        return out

    return f


def construct_beta(a: DSequence, b: DSequence, r: float, horizon: MultiIndex | Sequence[int],
                   series_tol: float = 0.05) -> BetaReport:
    """Product-type normalizer growing slower than ``b`` with ``sum a / beta^r`` bounded.

    Per coordinate ``i`` the factor is the running maximum over ``j <= k`` of
    ``b_i(j) * max(t_i(j), b_i(j)^-r) ** (1 / (2 r d))``, where ``t_i(j)`` is
    the sum of ``a / b^r`` over cells of ``[1, horizon]`` with ``n_i >= j``.
    Beyond the horizon the tail term is dropped. The input series must not
    look divergent and its last dyadic relative increment must be under
    ``series_tol``.
    """
    if not r > 0:
        raise SequenceError(f"exponent r must be positive, got {r}")
    H = as_index(horizon)
    d = H.d
    if not (b.product_type and b.positive and b.nondecreasing and b.unbounded):
        raise SequenceError("b must be a positive, nondecreasing, unbounded product-type sequence")
    b.check(H)
    verdict = series_sum(a, b, r, dyadic_to(H), tol=series_tol)
    if verdict.verdict == DIVERGING:
        raise SequenceError(f"input series looks divergent at {H}: increments {verdict.increments[-3:]}")
    if verdict.tail_increment >= series_tol:
        raise SequenceError(
            f"horizon {H} too small to estimate tails: relative increment "
            f"{verdict.tail_increment:.3g} >= {series_tol}")

    c = term_table(a, b, r, H)
    expo = 1.0 / (2.0 * r * d)
    factors = []
    for i in range(d):
        others = tuple(ax for ax in range(d) if ax != i)
        marginal = c.sum(axis=others) if others else c
        tails = np.cumsum(marginal[::-1])[::-1]
        bi = b.factor_values(i, H[i])
        g = bi * np.maximum(tails, bi ** (-r)) ** expo
        beta_i = np.maximum.accumulate(g)
        tail_fn = (lambda k, f=b.factor(i): np.asarray(f(k), dtype=np.float64) ** (1.0 - 1.0 / (2 * d)))
        factors.append(_table_factor(beta_i, tail_fn))
    beta = DSequence(factors=tuple(factors), name=f"beta[{a.name},{b.name},r={r:g}]",
                     positive=True, nondecreasing=True, unbounded=True)

    bvals = b.on_rectangle(H)
    betavals = beta.on_rectangle(H)
    dyadic = dyadic_to(H)
    ratio = np.array([read_at(betavals, p) / read_at(bvals, p) for p in dyadic])
    dec = np.diff(ratio) <= 0
    knee = len(ratio) - 1
    while knee > 0 and dec[knee - 1]:
        knee -= 1
    q = max(1, len(ratio) // 4)
    fq, lq = float(ratio[:q].mean()), float(ratio[-q:].mean())

    S = cumulate(a.on_rectangle(H) / betavals**r)
    unit = RectangleSchedule.unit_diagonal(H)
    P = np.array([read_at(S, p) for p in unit])
    final_inc = float((P[-1] - P[-2]) / P[-1]) if len(P) > 1 and P[-1] > 0 else 0.0
    dy = [read_at(S, p) for p in dyadic]
    dy_inc = float((dy[-1] - dy[-2]) / dy[-1]) if len(dy) > 1 and dy[-1] > 0 else 0.0

    flags_ok = True
    try:
        beta.check(H)
    except SequenceError:
        flags_ok = False
    return BetaReport(beta, H, [int(max(p.coords)) for p in dyadic], ratio, knee, fq, lq,
                      fq / lq if lq > 0 else math.inf, P, final_inc, dy_inc, float(P[-1]),
                      verdict, flags_ok)


__all__ = [
    "CONVERGED", "DIVERGING", "INCONCLUSIVE", "BetaReport", "DSequence", "SequenceError",
    "SeriesVerdict", "classify", "constant_seq", "construct_beta", "dyadic_to", "geometric_seq",
    "logplus", "logplus_seq", "logplus_weight", "make_product", "normalized", "parse_family",
    "power_seq", "series_sum", "size", "size_seq", "term_table",
]
