"""Dense float64 vectors and a seed-stable random stream.

Vectors are plain 1-D ``numpy.ndarray`` objects with dtype float64. The
helpers here add the length and finiteness checks the rest of the package
relies on.
"""

from __future__ import annotations

import numpy as np


class UsageError(ValueError):
    """Raised when an operation is called with inconsistent arguments."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a computed quantity."""


def as_vector(a, n: int | None = None) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise UsageError(f"expected a 1-D vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise UsageError(f"expected length {n}, got {v.shape[0]}")
    return v


def _same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise UsageError(f"length mismatch: {a.shape} vs {b.shape}")


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    _same_length(a, b)
    return float(a @ b)


def norm2(a) -> float:
    return float(np.linalg.norm(as_vector(a)))


def check_finite(x, what: str = "value"):
    """Return ``x`` unchanged, raising :class:`NonFiniteError` on NaN/Inf."""
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what} encountered")
    return x


class Rng:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    PCG64 output for a given seed is fixed by numpy's stream-compatibility
    policy, so equal seeds give bitwise-equal draws across platforms.
    """

    def __init__(self, seed: int = 0):
        if seed < 0 or seed >= 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream from (seed, key)."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def randn(self, n: int, scale: float = 1.0) -> np.ndarray:
        return randn(self, n, scale)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def randn(rng: Rng, n: int, scale: float = 1.0) -> np.ndarray:
    if n < 1:
        raise UsageError("n must be at least 1")
    if not scale > 0:
        raise UsageError("scale must be positive")
    return scale * rng.generator.standard_normal(n)
