"""Counter-based variate streams.

Every stream is Philox-4x64 keyed by ``(seed, stream_id)``; its state is just
the number of 64-bit words consumed so far, which makes snapshots and
independent ensemble members trivial.
"""

from __future__ import annotations

import numpy as np

MAIN_STREAM = 0
COLLISION_STREAM = 1
INITIAL_STREAM = 2

WORDS_PER_STEP = 3
_MASK64 = (1 << 64) - 1


def probability_threshold(prob: float) -> np.uint64:
    """Threshold such that ``word < threshold`` has probability ``prob``."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {prob}")
    return np.uint64(min(int(prob * 2.0**64), _MASK64))


def words_to_unit(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles in [0, 1) using the top 53 bits."""
    return (words >> np.uint64(11)).astype(np.float64) * 2.0**-53


class VariateStream:
    """A resumable stream of raw 64-bit words."""

    def __init__(self, seed: int, stream: int, position: int = 0):
        if position < 0:
            raise ValueError("position must be nonnegative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._position = 0
        self._bitgen = None
        self.seek(position)

    @property
    def position(self) -> int:
        return self._position

    def seek(self, position: int) -> None:
        block, offset = divmod(int(position), 4)
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key, counter=block)
        if offset:
            self._bitgen.random_raw(offset)
        self._position = int(position)

    def words(self, count: int) -> np.ndarray:
        out = self._bitgen.random_raw(count)
        self._position += count
        return np.asarray(out, dtype=np.uint64).reshape(count)

    def uniform(self) -> float:
        return float(words_to_unit(self.words(1))[0])

    def __repr__(self) -> str:
        return f"VariateStream(seed={self.seed}, stream={self.stream}, position={self._position})"
