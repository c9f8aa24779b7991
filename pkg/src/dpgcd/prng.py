"""Portable splitmix64 generator.

The stream is counter based (output k depends only on ``seed + k * GAMMA``),
so blocks of draws are produced with vectorised uint64 arithmetic and agree
bit for bit with the scalar recurrence on any platform.
"""

from __future__ import annotations

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Prng:
    """splitmix64: state += GAMMA, then an xor-shift-multiply finaliser."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & _MASK
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            k = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + k * np.uint64(GAMMA)
            out = _mix64_array(z)
        self.state = (self.state + n * GAMMA) & _MASK
        return out

    def random(self, n: int | None = None):
        """Uniform doubles in [0, 1) from the top 53 bits."""
        if n is None:
            return (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, n: int | None = None):
        r = self.random(n)
        return low + (high - low) * r

    def integers(self, low: int, high: int) -> int:
        """Integer in [low, high)."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        return low + int(self.random() * span)

    def normal(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])
        return z[:n]

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def fork(self, key: int) -> "Prng":
        """Independent child stream addressed by ``key`` (e.g. a sample id)."""
        return Prng(mix64(self.state ^ mix64((key + 1) * GAMMA)))
