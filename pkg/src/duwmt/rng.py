"""Counter-based random streams.

Every stream is addressed by (global seed, path of child indices); every draw
is addressed by (stream, draw index) and generated by a freshly keyed Philox
counter generator. Draws therefore depend only on their address, never on
scheduling, so parallel consumers of sibling streams reproduce the sequential
results bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix(values: tuple[int, ...]) -> int:
    h = 0x243F6A8885A308D3  # pi fractional bits; arbitrary nonzero start
    for v in values:
        h = _splitmix64(h ^ (v & _MASK64))
    return h


class RngStream:
    """One addressable random stream; `child(i)` derives an independent substream."""

    __slots__ = ("seed", "path", "_draws", "_bg", "_gen")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._draws = 0
        self._bg = None
        self._gen = None

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(index),))

    def _generator(self) -> np.random.Generator:
        words = (self.seed, len(self.path), *self.path, self._draws)
        key_lo = _mix(words)
        key_hi = _splitmix64(key_lo ^ 0x9E3779B97F4A7C15)
        self._draws += 1
        if self._bg is None:
            # rekeying a cached Philox skips constructor/entropy overhead and
            # matches a freshly keyed generator bit for bit
            self._bg = np.random.Philox(key=0)
            self._gen = np.random.Generator(self._bg)
        state = self._bg.state
        state["state"]["key"][0] = key_lo
        state["state"]["key"][1] = key_hi
        state["state"]["counter"][:] = 0
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bg.state = state
        return self._gen

    def uniform(self, shape) -> np.ndarray:
        """Uniform [0, 1) draws, float64."""
        return self._generator().random(shape)

    def uniform32(self, shape) -> np.ndarray:
        """Uniform [0, 1) draws, float32 (cheaper; used for dropout masks)."""
        return self._generator().random(shape, dtype=np.float32)

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws, float64."""
        return self._generator().standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path}, draws={self._draws})"
