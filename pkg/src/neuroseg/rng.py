"""Deterministic random number generation.

All randomness in the toolkit flows through :class:`Rng`, a splitmix64
generator.  The algorithm is pinned (not delegated to numpy's Generator)
so that streams are reproducible across platforms and library versions;
tests lock the first few outputs of known seeds.

Substreams are derived with :func:`derive`, which folds integer keys into
a seed through the same mixing function.  This keeps e.g. per-volume and
per-tree generation independent of iteration order.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive(seed: int, *keys: int) -> int:
    """Derive a child seed by absorbing integer keys into `seed`."""
    s = seed & _MASK64
    for k in keys:
        s = (s + _GAMMA) & _MASK64
        s = _mix((s ^ (k & _MASK64)) & _MASK64)
    return s


class Rng:
    """splitmix64 stream; identical seeds yield identical streams."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def u64_array(self, n: int) -> np.ndarray:
        """Next `n` outputs, vectorized; advances the stream by `n`."""
        if n < 0:
            raise ValueError("n must be >= 0")
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + steps
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & _MASK64
        return z

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + (hi - lo) * u

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self) -> float:
        # Box-Muller; one fresh pair per call keeps the stream position
        # a simple function of call count.
        u1 = ((self.next_u64() >> 11) + 1) * 2.0 ** -53
        u2 = (self.next_u64() >> 11) * 2.0 ** -53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape, sigma: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        raw = self.u64_array(2 * n)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (sigma * z).reshape(shape)

    def trunc_normal_array(self, shape, sigma: float = 0.02, bound: float = 2.0) -> np.ndarray:
        """Normal draws with |z| <= bound (in units of sigma), redrawn on reject."""
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            z = self.normal_array((n - filled,))
            ok = np.abs(z) <= bound
            k = int(ok.sum())
            out[filled:filled + k] = z[ok]
            filled += k
        return (sigma * out).reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo reduction; bias is negligible for n << 2^64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
