"""SplitMix64, the seeding generator from Steele, Lea and Flood (2014).

Output ``i`` (counting from 1) of a stream seeded with ``s`` is
``mix(s + i * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix`` is::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

with all arithmetic mod 2**64. Floats take the top 53 bits. The same seed
gives the same stream on every platform and numpy version.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MUL1 = np.uint64(0xBF58476D1CE4E5B9)
MUL2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = np.uint64(seed % 2**64)
        self.count = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.count + 1, self.count + n + 1, dtype=np.uint64)
        self.count += n
        with np.errstate(over="ignore"):
            z = self.state + idx * GAMMA
            z = (z ^ (z >> np.uint64(30))) * MUL1
            z = (z ^ (z >> np.uint64(27))) * MUL2
        return z ^ (z >> np.uint64(31))

    def random(self, shape=()) -> np.ndarray:
        """Uniform floats in ``[0, 1)``."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(shape)

    def uniform(self, low=0.0, high=1.0, shape=()) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in ``[low, high)`` by scaling a uniform draw."""
        return low + np.floor(self.random(shape) * (high - low)).astype(np.int64)
