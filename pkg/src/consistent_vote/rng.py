"""Portable, counter-based random streams.

Every random quantity in the package is derived from two primitives:

* ``mix64(base, i)``: the SplitMix64 finalizer applied to
  ``base + (i + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``. Used to derive
  independent 64-bit seeds and indices from a (base seed, counter) pair.
* ``Stream(seed)``: Philox-4x64-10 keyed by ``seed`` with its counter
  starting at zero, read as raw 64-bit words. Philox is specified
  independently of numpy (Random123), so the words are reproducible in any
  language.

All derived draws (uniform doubles, permutations, normals) are defined on
top of the raw words below, never through numpy's distribution
algorithms, which are not guaranteed stable across numpy releases.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(base: int, i: int) -> int:
    """Deterministic 64-bit hash of a (base seed, counter) pair."""
    return splitmix64((base + (i + 1) * _GOLDEN) & MASK64)


def below(word: int, bound: int) -> int:
    """Map a 64-bit word to ``[0, bound)`` by multiply-high (Lemire)."""
    return (word * bound) >> 64


class Stream:
    """Philox-4x64-10 stream keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._bitgen = np.random.Philox(key=seed)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n).astype(np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits of each word."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def uniform_range(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of n fresh uniforms; ties would need two equal 53-bit draws
        return np.argsort(self.uniform(n), kind="stable")

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by the Box-Muller transform, two per word pair."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n]

    def sample_without_replacement(self, population: int, k: int) -> np.ndarray:
        """First ``k`` entries of a uniformly random permutation of ``range(population)``."""
        if not 0 <= k <= population:
            raise ValueError(f"cannot draw {k} items from a population of {population}")
        return self.permutation(population)[:k]
