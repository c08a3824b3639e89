"""Portable seeded random numbers.

Everything random in this package (weight init, shuffle order, dataset
rendering) draws from :class:`XorShift64Star`, so results are identical on
every platform and numpy version.

Generator: xorshift64* (Marsaglia shift register with triple 12/25/27,
output multiplier 0x2545F4914F6CDD1D, Vigna 2016). Seeds pass through one
round of SplitMix64 so that small or zero seeds still give a good state.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
XORSHIFT_MULT = 0x2545F4914F6CDD1D


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (already advanced by the caller)."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        state = splitmix64(seed)
        # all-zero is the one fixed point of the shift register
        self._state = state if state else GOLDEN_GAMMA

    @classmethod
    def for_stream(cls, seed: int, index: int) -> "XorShift64Star":
        """Independent generator for item ``index`` of the run seeded by ``seed``."""
        return cls(splitmix64((seed + GOLDEN_GAMMA * (index + 1)) & MASK64))

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * XORSHIFT_MULT) & MASK64

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        # 53 high bits -> double in [0, 1)
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection, no modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = MASK64 - (MASK64 + 1) % n
        while True:
            r = self.next_u64()
            if r <= limit:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
