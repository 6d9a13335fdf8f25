"""Portable seeded randomness for plan construction.

SplitMix64 is used instead of numpy's generators so that shuffles are
reproducible bit-for-bit by any implementation that follows the same
recipe: seeds are derived from a BLAKE2b digest of the context, bounded
integers come from rejection sampling, shuffles are Fisher-Yates.
"""
from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *context) -> int:
    """Mix a base seed with context values (labels, indices, tags) into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & MASK64).to_bytes(8, "little"))
    for part in context:
        data = str(part).encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates shuffle; returns the list for convenience."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def shuffled(items, seed: int, *context) -> list:
    return SplitMix64(derive_seed(seed, *context)).shuffle(list(items))
