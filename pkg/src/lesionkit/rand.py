"""Deterministic counter-based random number generation.

Every stochastic component of the toolkit (corruption transforms, phantom
generation, reference weight initialization) draws from the splitmix64
sequence, so outputs are bit-reproducible across runs, platforms and
independent reimplementations.  The raw stream is fully specified by

    state_i = seed + (i + 1) * 0x9E3779B97F4A7C15                (mod 2^64)
    z       = (state_i ^ (state_i >> 30)) * 0xBF58476D1CE4E9B5   (mod 2^64)
    z       = (z ^ (z >> 27)) * 0x94D049BB133111EB               (mod 2^64)
    out_i   = z ^ (z >> 31)

where ``i`` counts draws from 0.  Derived quantities:

* uniform double in [0, 1):   ``(out_i >> 11) * 2**-53``
* integer in [lo, hi):        ``lo + floor(uniform * (hi - lo))``
* standard normal pair:       Box-Muller on two consecutive uniforms,
                              ``r = sqrt(-2 ln(1 - u1))``, ``t = 2 pi u2``,
                              yielding ``r cos t`` then ``r sin t``
* permutation of n items:     Fisher-Yates, swapping index ``i`` (from n-1
                              down to 1) with ``j = floor(u * (i + 1))``
* sub-stream seed:            ``mix(seed ^ (salt * 0xD2B74407B1CE6E93))``
                              with ``mix`` the z-scrambling above

The integer mapping carries a bias of at most ``(hi - lo) / 2**53``;
negligible for the small ranges used here and kept for its simplicity.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E9B5)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD2B74407B1CE6E93)
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Stateful view over the splitmix64 counter stream for one seed."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & _MASK64)
        self._count = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def spawn(self, salt: int) -> "Rng":
        """Independent sub-stream derived from (seed, salt)."""
        with np.errstate(over="ignore"):
            child = _mix(self._seed ^ np.uint64(salt & _MASK64) * _STREAM)
        return Rng(int(child))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix(self._seed + idx * _GOLDEN)

    def uniform(self, size: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Uniform float64 draws in [0, 1)."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        vals = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return vals.reshape(shape) if shape else float(vals[0])

    def integers(self, lo: int, hi: int, size: int | tuple[int, ...] = ()) -> np.ndarray | int:
        """Integer draws in [lo, hi)."""
        if hi <= lo:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        vals = np.floor(np.asarray(self.uniform(size)) * (hi - lo)).astype(np.int64) + lo
        return vals if vals.shape else int(vals)

    def normal(self, size: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Standard normal draws via Box-Muller."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        t = 2.0 * np.pi * u[m:]
        vals = np.empty(2 * m)
        vals[0::2] = r * np.cos(t)
        vals[1::2] = r * np.sin(t)
        vals = vals[:n]
        return vals.reshape(shape) if shape else float(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n)
        if n < 2:
            return idx
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx
