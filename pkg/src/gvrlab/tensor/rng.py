"""Counter-based random streams.

Every consumer that needs randomness gets its own ``Rng`` keyed by a
``(seed, stream)`` pair. The underlying bit generator is Philox, whose
output for a given key depends only on the draw counter, so work can be
split across workers in any order and still reproduce bit-for-bit.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _stream_id(parent: int, label: str, index: int) -> int:
    digest = hashlib.blake2b(
        f"{parent}:{label}:{index}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """A reproducible random stream identified by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: int = 0):
        if not (0 <= seed <= _MASK64 and 0 <= stream <= _MASK64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream = int(stream)
        key = (self.seed << 64) | self.stream
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def child(self, label: str, index: int = 0) -> "Rng":
        """Independent stream derived from this one, e.g. one per frame."""
        return Rng(self.seed, _stream_id(self.stream, label, index))

    def normal(self, shape, dtype=np.float32) -> np.ndarray:
        return self.generator.standard_normal(shape, dtype=dtype)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def randn(rng: Rng, shape) -> np.ndarray:
    """I.i.d. standard normal float32 tensor drawn from ``rng``."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"randn needs positive extents, got {shape}")
    if math.prod(shape) == 0:
        raise ValueError("zero-sized shape")
    return rng.normal(shape)
