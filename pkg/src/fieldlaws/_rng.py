"""Counter-based uniforms keyed by (seed, stream, replicate, cell coordinates).

Each uniform is a pure function of its key, so a cell gets the same value no
matter which rectangle it is generated in or in what order. The key words are
absorbed one at a time through the SplitMix64 finaliser; the top 53 bits of
the final word give a double in the open interval (0, 1).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    return a.astype(np.int64).view(np.uint64) if a.dtype.kind == "i" else a.astype(np.uint64)


def hash_key(words: Sequence) -> np.ndarray:
    """Hash a sequence of broadcastable integer arrays into uint64 words."""
    with np.errstate(over="ignore"):
        h = np.zeros((), dtype=np.uint64)
        for w in words:
            h = _mix(h + _GOLDEN + _as_u64(w))
    return h


def uniforms(seed: int, stream: int, replicates, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Uniform(0, 1) array broadcast over ``replicates`` and the coordinate grids.

    ``replicates`` is placed on a new leading axis when it is an array.
    """
    reps = np.asarray(replicates, dtype=np.int64)
    if reps.ndim == 1:
        reps = reps.reshape((-1,) + (1,) * len(coords))
        coords = [np.asarray(c)[np.newaxis, ...] for c in coords]
    seed_word = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    h = hash_key([np.asarray(seed_word), np.asarray(stream, dtype=np.int64), reps, *coords])
    return ((h >> _S11).astype(np.float64) + 0.5) * 2.0**-53
