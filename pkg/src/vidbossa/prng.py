"""Deterministic, platform-independent pseudo-random numbers.

Two generators are used, both from Vigna's xorshift family:

* ``XorShift64Star`` -- the scalar generator used for sampling patterns,
  codebook initialisation and subsampling.  State update is
  ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` and the output is
  ``x * 0x2545F4914F6CDD1D (mod 2**64)``.  The state is seeded through one
  SplitMix64 step so that small or zero seeds still give a nonzero state.
* ``splitmix64_stream`` -- the counter-based SplitMix64 finaliser,
  vectorised over numpy ``uint64`` arrays.  Output ``i`` depends only on
  ``(seed, i)``, which makes bulk noise for the synthetic corpus cheap and
  reproducible.

Neither generator depends on numpy's ``Generator`` stream stability, so all
artifacts are bit-identical across numpy versions and platforms.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 step applied to the integer ``x``."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, *keys) -> int:
    """Fan a root seed out to a named sub-stream (stage name, fold, ...)."""
    h = hashlib.sha256(str(int(root) & MASK64).encode())
    for key in keys:
        h.update(b"\x00" + str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


class XorShift64Star:
    """xorshift64* generator (Vigna 2016)."""

    def __init__(self, seed: int):
        state = splitmix64(int(seed) & MASK64)
        self.state = state or _GOLDEN

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection (Lemire-free, simple)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def gauss(self, sigma: float = 1.0) -> float:
        """Normal deviate via the Box-Muller transform (cosine branch)."""
        u1 = self.random()
        while u1 <= 0.0:
            u1 = self.random()
        u2 = self.random()
        return sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """``k`` distinct indices from ``range(n)`` via partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot sample {k} items from {n}")
        swapped: dict[int, int] = {}
        out = []
        for i in range(k):
            j = i + self.randbelow(n - i)
            vi = swapped.get(i, i)
            vj = swapped.get(j, j)
            swapped[j] = vi
            out.append(vj)
        return out

    def permutation(self, n: int) -> list[int]:
        return self.sample_without_replacement(n, n)


def splitmix64_stream(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """``count`` uint64 outputs of counter-mode SplitMix64."""
    base = np.uint64(int(seed) & MASK64)
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = base + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_stream(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Doubles in [0, 1) from :func:`splitmix64_stream`."""
    raw = splitmix64_stream(seed, count, offset)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
