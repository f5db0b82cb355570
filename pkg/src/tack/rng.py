"""Deterministic splitmix64 random stream.

All sampling in the package flows through :class:`Rng` so that datasets and
training runs are a pure function of ``(seed, config)``. Draws are vectorised:
a request for ``n`` values advances the state by ``n`` steps in one numpy pass.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """splitmix64 finaliser applied to a single integer."""
    return int(_mix(np.array([value & _MASK], dtype=np.uint64))[0])


class Rng:
    """splitmix64 stream with numpy-vectorised draws."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        """Independent stream for ``hash(seed, *keys)``; used for per-batch workers."""
        h = mix64(int(seed) & _MASK)
        for k in keys:
            h = mix64(h ^ ((int(k) * _GAMMA + 0x632BE59BD9B4E019) & _MASK))
        return cls(h)

    def spawn(self) -> "Rng":
        return Rng(int(self.next_u64(1)[0]))

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            out = _mix(z)
        self.state = (self.state + n * _GAMMA) & _MASK
        return out

    def random(self, size=None) -> np.ndarray | float:
        """Uniform doubles in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (np.asarray(high) - low) * u if size is not None else low + (high - low) * u

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n).reshape(2, n)
        z = np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * math.pi * u[1])
        if size is None:
            return loc + scale * float(z[0])
        return loc + scale * z.reshape(size)

    def integers(self, low: int, high: int | None = None, size=None):
        """Integers in [low, high)."""
        if high is None:
            low, high = 0, low
        u = self.random(size)
        v = np.floor(low + (high - low) * np.asarray(u)).astype(np.int64)
        v = np.minimum(v, high - 1)
        return int(v) if size is None else v

    def choice(self, n: int, p: np.ndarray | None = None) -> int:
        if p is None:
            return self.integers(n)
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        idx = int(np.searchsorted(cdf, self.random() * cdf[-1], side="right"))
        return min(idx, n - 1)

    def choices(self, p: np.ndarray, size: int) -> np.ndarray:
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        idx = np.searchsorted(cdf, self.random(size) * cdf[-1], side="right")
        return np.minimum(idx, len(cdf) - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")
