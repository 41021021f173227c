"""Seeded pseudo-random streams used wherever bit-reproducibility matters.

The generator is SplitMix64 (Steele, Lea & Flood's 64-bit mixer), mapped to
standard normals through Box-Muller. Python integers and IEEE doubles make the
integer stream identical on every platform; the normal stream is as stable as
the platform's libm.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """SplitMix64 stream: state advances by the golden-ratio increment."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare: float | None = None

    def next_uint64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        # top 53 bits, shifted into (0, 1] so the Box-Muller log is finite
        return ((self.next_uint64() >> 11) + 1) * (1.0 / (1 << 53))

    def next_gauss(self) -> float:
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        u1 = self.next_unit()
        u2 = self.next_unit()
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        self._spare = radius * math.sin(angle)
        return radius * math.cos(angle)


def derive_seed(base: int, *salts: int) -> int:
    """Fold ``salts`` into ``base`` to get an independent substream seed."""
    seed = SplitMix64(base).next_uint64()
    for salt in salts:
        seed = SplitMix64(seed ^ (salt & _MASK64)).next_uint64()
    return seed


def normal_array(rng: SplitMix64, shape: tuple[int, ...], scale: float = 1.0):
    """Fill ``shape`` row-major with scaled standard normals from ``rng``."""
    count = 1
    for dim in shape:
        count *= int(dim)
    values = [scale * rng.next_gauss() for _ in range(count)]
    return np.array(values, dtype=float).reshape(shape)
