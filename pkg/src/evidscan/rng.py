"""Seeded, splittable random streams.

A stream is identified by ``(seed, stream_id)``; identical pairs reproduce
identical draw sequences across runs and platforms (numpy PCG64 via
SeedSequence). Child streams are derived by stream-splitting and do not
overlap.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Rng"]


class Rng:
    """Deterministic random stream keyed by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seed, self.stream_id))))

    def child(self, stream_id: int) -> "Rng":
        """Derive an independent stream under the same seed."""
        return Rng(self.seed, stream_id)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, mean: float, std: float, shape=()) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape)
