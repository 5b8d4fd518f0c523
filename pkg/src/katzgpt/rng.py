"""Counter-based deterministic random streams.

Every draw is keyed by (seed, counter): replaying a stream from the same
state reproduces the same values bitwise, and streams with distinct seeds
are independent for test purposes. Training code derives one stream per
(seed, purpose, epoch, batch, ...) tuple so runs are resumable at epoch
granularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _generator(words: tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([w & _MASK64 for w in words]))


@dataclass
class RngStream:
    """Stateful stream: draw n advances the counter by 1."""

    seed: int
    counter: int = 0

    def _next(self) -> np.random.Generator:
        gen = _generator((self.seed, self.counter))
        self.counter += 1
        return gen

    def normal(self, shape, scale: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._next().standard_normal(shape) * scale).astype(dtype)

    def uniform(self, shape, dtype=np.float32) -> np.ndarray:
        return self._next().random(shape).astype(dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._next().integers(low, high, size=shape)

    def categorical(self, probs: np.ndarray) -> int:
        """Sample an index from a 1-D probability vector."""
        return int(self._next().choice(len(probs), p=np.asarray(probs, dtype=np.float64)))

    def clone(self) -> "RngStream":
        return RngStream(self.seed, self.counter)


def derive(seed: int, *path: int) -> RngStream:
    """Stream whose seed is a deterministic function of (seed, *path)."""
    # Fold the path into a single 64-bit key via SeedSequence entropy mixing.
    key = _generator((seed, *path)).integers(0, _MASK64, dtype=np.uint64)
    return RngStream(int(key))
