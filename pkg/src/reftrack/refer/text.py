"""Frozen word encoder standing in for a pretrained text model.

Each word maps to a fixed direction with unit RMS per channel, drawn from
a generator seeded by ``(seed, crc32(word))``. This equals a seeded random
projection of the bag-of-words vector and covers words never seen before.
"""

from __future__ import annotations

import zlib
from functools import lru_cache

import numpy as np


def tokenize(text) -> tuple[str, ...]:
    if isinstance(text, str):
        return tuple(text.lower().split())
    return tuple(w.lower() for w in text)


class TextEncoder:
    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache = lru_cache(maxsize=None)(self._word)

    def _word(self, word: str) -> np.ndarray:
        rng = np.random.default_rng([self.seed, zlib.crc32(word.encode("utf-8"))])
        v = rng.normal(size=self.dim)
        v = v * (np.sqrt(self.dim) / np.linalg.norm(v))
        v.setflags(write=False)
        return v

    def encode(self, text) -> np.ndarray:
        """Token features ``[L, dim]``."""
        words = tokenize(text)
        if not words:
            raise ValueError("cannot encode empty text")
        return np.stack([self._cache(w) for w in words])

    def pooled(self, text) -> np.ndarray:
        return self.encode(text).mean(axis=0)
