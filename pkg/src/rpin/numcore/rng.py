"""Seeded random streams.

All randomness in the package flows through :class:`Rng`, a thin wrapper over
numpy's PCG64 bit generator. PCG64 output and numpy's ``Generator``
distribution methods are stable across platforms for a given seed, so a seed
fully determines every stream.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"


class Rng:
    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.algorithm = ALGORITHM
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self._gen.permutation(x)

    def spawn(self, offset: int) -> "Rng":
        """Independent child stream keyed by ``seed + offset``."""
        return Rng((self.seed + offset) % 2**64)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self._gen.bit_generator.state = value
