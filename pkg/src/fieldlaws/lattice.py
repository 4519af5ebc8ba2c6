"""Multi-indices, rectangles and the partial-sum / running-max engine.

Indices are 1-based: a rectangle ``[1, n]`` holds every ``m`` with
``1 <= m_i <= n_i``. Tables store the value at ``m`` in ``values[m - 1]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_CELL_BUDGET = 2**26


class LatticeError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class MultiIndex:
    coords: tuple[int, ...]

    def __init__(self, *coords: int | Iterable[int]):
        if len(coords) == 1 and not isinstance(coords[0], (int, np.integer)):
            coords = tuple(coords[0])  # type: ignore[arg-type]
        if not coords:
            raise LatticeError("a multi-index needs at least one coordinate")
        vals = []
        for c in coords:
            if isinstance(c, bool) or not isinstance(c, (int, np.integer)):
                raise LatticeError(f"coordinate {c!r} is not an integer")
            if c < 1:
                raise LatticeError(f"coordinate {c} < 1 in {tuple(coords)}")
            vals.append(int(c))
        object.__setattr__(self, "coords", tuple(vals))

    @property
    def d(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self) -> Iterator[int]:
        return iter(self.coords)

    def __getitem__(self, i: int) -> int:
        return self.coords[i]

    def __repr__(self) -> str:
        return f"MultiIndex{self.coords}"

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.coords)) + ")"

    def _check(self, other: "MultiIndex") -> None:
        if other.d != self.d:
            raise LatticeError(f"dimension mismatch: {self.d} vs {other.d}")

    def __le__(self, other: "MultiIndex") -> bool:
        self._check(other)
        return all(a <= b for a, b in zip(self.coords, other.coords))

    def __lt__(self, other: "MultiIndex") -> bool:
        return self <= other and self != other

    def __ge__(self, other: "MultiIndex") -> bool:
        return other <= self

    def __gt__(self, other: "MultiIndex") -> bool:
        return other < self

    def size(self) -> int:
        return math.prod(self.coords)

    def cmax(self, other: "MultiIndex") -> "MultiIndex":
        """Coordinate-wise maximum."""
        self._check(other)
        return MultiIndex(max(a, b) for a, b in zip(self.coords, other.coords))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coords


def as_index(n: MultiIndex | Sequence[int] | int) -> MultiIndex:
    if isinstance(n, MultiIndex):
        return n
    if isinstance(n, (int, np.integer)):
        return MultiIndex(int(n))
    return MultiIndex(tuple(n))


def diagonal(k: int, d: int) -> MultiIndex:
    return MultiIndex((k,) * d)


def iter_rectangle(n: MultiIndex | Sequence[int]) -> Iterator[MultiIndex]:
    """Yield every ``m`` with ``1 <= m <= n`` in lexicographic order."""
    n = as_index(n)
    for t in itertools.product(*(range(1, k + 1) for k in n.coords)):
        yield MultiIndex(t)


def check_budget(n: MultiIndex, budget: int = DEFAULT_CELL_BUDGET) -> None:
    if n.size() > budget:
        raise LatticeError(f"rectangle {n} has {n.size()} cells, over the budget of {budget}")


def coordinate_grids(n: MultiIndex) -> list[np.ndarray]:
    """1-based open index grids (as from ``np.ogrid``) over ``[1, n]``."""
    return [
        np.arange(1, k + 1).reshape([-1 if j == i else 1 for j in range(n.d)])
        for i, k in enumerate(n.coords)
    ]


class LatticeTable:
    """Immutable dense table over the rectangle ``[1, shape]``."""

    __slots__ = ("_values", "_shape")

    def __init__(self, values, shape: MultiIndex | Sequence[int] | None = None,
                 budget: int = DEFAULT_CELL_BUDGET):
        arr = np.array(values, copy=True)
        if arr.ndim == 0:
            raise LatticeError("a table needs at least one dimension")
        if shape is None:
            shape = MultiIndex(arr.shape)
        shape = as_index(shape)
        check_budget(shape, budget)
        if arr.shape != shape.coords:
            arr = arr.reshape(shape.coords)
        if arr.dtype.kind not in "iuf":
            raise LatticeError(f"unsupported dtype {arr.dtype}")
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            bad = _first_bad(~np.isfinite(arr))
            raise LatticeError(f"non-finite entry at cell {bad}")
        arr.setflags(write=False)
        self._values = arr
        self._shape = shape

    @property
    def shape(self) -> MultiIndex:
        return self._shape

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def d(self) -> int:
        return self._shape.d

    def __len__(self) -> int:
        return self._values.size

    def __getitem__(self, m: MultiIndex | Sequence[int]) -> float:
        m = as_index(m)
        if not m <= self._shape:
            raise LatticeError(f"{m} outside [1, {self._shape}]")
        return self._values[tuple(c - 1 for c in m.coords)].item()

    def restrict(self, n: MultiIndex | Sequence[int]) -> "LatticeTable":
        """Sub-table over ``[1, n]`` for ``n <= shape``."""
        n = as_index(n)
        if not n <= self._shape:
            raise LatticeError(f"{n} outside [1, {self._shape}]")
        return LatticeTable(self._values[tuple(slice(0, k) for k in n.coords)], n)

    def __repr__(self) -> str:
        return f"LatticeTable(shape={self._shape}, dtype={self._values.dtype})"


def _first_bad(mask: np.ndarray) -> MultiIndex:
    idx = np.argwhere(mask)[0]
    return MultiIndex(int(i) + 1 for i in idx)


def _kahan_cumsum(x: np.ndarray, axis: int) -> np.ndarray:
    """Compensated cumulative sum along ``axis``, vectorised over the others."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, 0)
    out = np.empty_like(x)
    total = np.zeros(x.shape[1:])
    comp = np.zeros(x.shape[1:])
    for k in range(x.shape[0]):
        y = x[k] - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[k] = total
    return np.moveaxis(out, 0, axis)


def cumulate(arr: np.ndarray, axes: Sequence[int] | None = None) -> np.ndarray:
    """Rectangle sums of ``arr`` over the given axes (all axes by default).

    The d-fold cumulative sum equals the inclusion-exclusion recurrence
    ``S_m = X_m + sum_E (-1)^(|E|+1) S_{m-1_E}`` but needs no cancellation.
    Integer input stays integer; float input uses compensated summation.
    """
    arr = np.asarray(arr)
    if axes is None:
        axes = range(arr.ndim)
    if arr.dtype.kind in "iub":
        out = arr.astype(np.int64)
        for ax in axes:
            out = np.cumsum(out, axis=ax)
        return out
    out = arr.astype(np.float64)
    for ax in axes:
        out = _kahan_cumsum(out, ax)
    return out


def cumulative_max(arr: np.ndarray, axes: Sequence[int] | None = None) -> np.ndarray:
    """``M_l = max_{m <= l} arr_m`` over the given axes."""
    out = np.asarray(arr)
    if axes is None:
        axes = range(out.ndim)
    for ax in axes:
        out = np.maximum.accumulate(out, axis=ax)
    return out


def prefix_sums(values: LatticeTable) -> LatticeTable:
    """Partial sums ``S_m = sum_{k <= m} X_k`` over the whole table."""
    arr = values.values
    if arr.dtype.kind in "iu":
        # int64 is exact as long as the running absolute sum stays below 2**62
        bound = np.cumsum(np.abs(arr.astype(np.float64)).ravel())
        over = np.nonzero(bound >= 2.0**62)[0]
        if over.size:
            cell = np.unravel_index(over[0], arr.shape)
            raise LatticeError(
                f"integer overflow risk at cell {MultiIndex(int(i) + 1 for i in cell)}")
        return LatticeTable(cumulate(arr), values.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = cumulate(arr)
    if not np.all(np.isfinite(out)):
        raise LatticeError(f"non-finite partial sum at cell {_first_bad(~np.isfinite(out))}")
    return LatticeTable(out, values.shape)


def weight_table(w, shape: MultiIndex) -> np.ndarray:
    """Evaluate a weight over ``[1, shape]``; accepts a DSequence, callable, array or scalar."""
    if hasattr(w, "on_rectangle"):
        arr = w.on_rectangle(shape)
    elif callable(w):
        arr = np.asarray(w(*coordinate_grids(shape)), dtype=np.float64)
        arr = np.broadcast_to(arr, shape.coords)
    else:
        arr = np.broadcast_to(np.asarray(w, dtype=np.float64), shape.coords)
    return np.asarray(arr, dtype=np.float64)


def running_weighted_max(S: LatticeTable, w) -> LatticeTable:
    """``M_l = max_{m <= l} |S_m| w_m``; nondecreasing along the partial order."""
    weights = weight_table(w, S.shape)
    if np.any(~(weights > 0)):
        raise LatticeError(f"nonpositive weight at cell {_first_bad(~(weights > 0))}")
    return LatticeTable(cumulative_max(np.abs(S.values) * weights), S.shape)


@dataclass(frozen=True)
class RectangleSchedule:
    """A finite, strictly increasing chain of rectangles."""

    points: tuple[MultiIndex, ...]

    def __post_init__(self):
        pts = tuple(as_index(p) for p in self.points)
        if not pts:
            raise LatticeError("schedule is empty")
        for a, b in zip(pts, pts[1:]):
            if not a < b:
                raise LatticeError(f"schedule not increasing at {a} -> {b}")
        object.__setattr__(self, "points", pts)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def last(self) -> MultiIndex:
        return self.points[-1]

    @property
    def d(self) -> int:
        return self.points[0].d

    @classmethod
    def dyadic(cls, d: int, top: int, start: int = 0) -> "RectangleSchedule":
        """Diagonal points ``(2^j, ..., 2^j)`` for ``start <= j <= top``."""
        return cls(tuple(diagonal(2**j, d) for j in range(start, top + 1)))

    @classmethod
    def anisotropic(cls, exponents: Sequence[int], top: int) -> "RectangleSchedule":
        """Points ``(2^(e_1 j), ..., 2^(e_d j))`` for ``0 <= j <= top``."""
        return cls(tuple(MultiIndex(2 ** (e * j) for e in exponents) for j in range(top + 1)))

    @classmethod
    def unit_diagonal(cls, horizon: MultiIndex) -> "RectangleSchedule":
        """``(min(k, h_1), ..., min(k, h_d))`` for ``k = 1 .. max(h)``."""
        horizon = as_index(horizon)
        return cls(tuple(MultiIndex(min(k, h) for h in horizon.coords)
                         for k in range(1, max(horizon.coords) + 1)))


def read_at(arr: np.ndarray, m: MultiIndex) -> float:
    return arr[tuple(c - 1 for c in m.coords)]
