"""
Seeded, splittable random streams.

Rng wraps numpy's counter-based Philox generator keyed by a SeedSequence, so the
same (seed, spawn key) pair yields the same stream on every platform. Child
streams are addressed by integer keys instead of being drawn from the parent,
which keeps per-image and per-epoch streams independent of execution order.
"""

from typing import List, Tuple

import numpy as np

from grid.errors import PreconditionError

_MAX_SEED = 2**64


class Rng:
    """Deterministic random stream identified by a 64-bit seed and a spawn key."""

    def __init__(self, seed: int, spawn_key: Tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < _MAX_SEED:
            raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.spawn_key = tuple(int(k) for k in spawn_key)
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, *key: int) -> "Rng":
        """Independent stream addressed by ``key`` below this one."""
        return Rng(self.seed, self.spawn_key + tuple(key))

    def split(self, count: int) -> List["Rng"]:
        return [self.child(index) for index in range(count)]

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, spawn_key={self.spawn_key})"
