"""Named, seeded random streams."""
from __future__ import annotations

import zlib

import numpy as np


class RandomSource:
    """A numpy ``Generator`` keyed by ``(seed, label)``.

    The same pair always yields the same draws; different labels give
    statistically independent streams (distinct ``SeedSequence`` entropy).
    Generator methods (``integers``, ``random``, ``choice``...) are forwarded.
    """

    def __init__(self, seed: int, label: str = "main"):
        self.seed = int(seed)
        self.label = label
        entropy = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF,
                   zlib.crc32(label.encode("utf-8"))]
        self.generator = np.random.default_rng(np.random.SeedSequence(entropy))

    def child(self, label: str) -> "RandomSource":
        return RandomSource(self.seed, f"{self.label}/{label}")

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, label={self.label!r})"


def as_rng(rng) -> RandomSource | np.random.Generator:
    """Accept a RandomSource, a Generator, or an int seed."""
    if isinstance(rng, (RandomSource, np.random.Generator)):
        return rng
    return RandomSource(int(rng))
