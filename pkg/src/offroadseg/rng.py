"""Deterministic random streams for augmentation and data ordering."""

from __future__ import annotations

from typing import Sequence

import numpy as np


class RngStream:
    """Seeded random source with a draw counter.

    The reproducibility contract: identical seed plus an identical sequence of
    draw calls yields identical values, independent of process or worker
    layout. Parallel loaders must therefore each own a stream derived from
    (root seed, sample position) rather than sharing one.
    """

    def __init__(self, seed: int | Sequence[int]):
        if isinstance(seed, (list, tuple)):
            self.seed: int | tuple[int, ...] = tuple(int(s) for s in seed)
            entropy: int | list[int] = [int(s) for s in seed]
        else:
            self.seed = int(seed)
            entropy = int(seed)
        self.draws = 0
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    @classmethod
    def derive(cls, root_seed: int, *keys: int) -> "RngStream":
        """Child stream keyed by integers, e.g. (global seed, domain, position)."""
        return cls([int(root_seed), *keys])

    def uniform(self, lo: float, hi: float) -> float:
        self.draws += 1
        return float(self._gen.uniform(lo, hi))

    def uniform_array(self, lo: float, hi: float, shape) -> np.ndarray:
        self.draws += 1
        return self._gen.uniform(lo, hi, size=shape)

    def bernoulli(self, p: float) -> bool:
        self.draws += 1
        return bool(self._gen.random() < p)

    def randint(self, lo: int, hi: int) -> int:
        """Integer drawn uniformly from [lo, hi] inclusive."""
        self.draws += 1
        return int(self._gen.integers(lo, hi, endpoint=True))

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)
