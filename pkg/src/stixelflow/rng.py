"""Deterministic pseudo-random streams.

Every random draw in the package flows through SplitMix64 so that results
are reproducible bit-for-bit across platforms and Python versions. The
generator and its constants are fixed:

    state'   = (state + 0x9E3779B97F4A7C15) mod 2^64
    output   = mix64(state')

where mix64 is the SplitMix64 finalizer (xor-shift / multiply with
0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). Substreams are derived by
combining a seed with an FNV-1a hash of a text label, never with Python's
builtin hash().
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """SplitMix64 finalizer: avalanche a 64-bit value."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Stable substream seed for (seed, label); labels use FNV-1a 64."""
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return mix64((seed ^ h) & MASK64)


class SplitMix64:
    """Sequential 64-bit generator; cheap, deterministic, splittable via labels."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN_GAMMA) & MASK64
        return mix64(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform float in [lo, hi); 53-bit mantissa resolution."""
        u = (self.next_u64() >> 11) * 2.0**-53
        return lo + (hi - lo) * u

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive.

        Plain modulo reduction: the bias over a 64-bit space is far below
        anything observable here and keeps the draw count at one per call.
        """
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Standard Box-Muller; consumes exactly two uniforms per call."""
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0, 1], log-safe
        u2 = (self.next_u64() >> 11) * 2.0**-53
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + std * z

    def split(self, label: str) -> "SplitMix64":
        """Independent substream named by label, rooted at this stream's state."""
        return SplitMix64(derive_seed(self._state, label))
