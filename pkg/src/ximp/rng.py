"""Seeded pseudo-random streams: xoshiro256++ state seeded through splitmix64.

Scalar draws run in pure Python; bulk float generation (dropout masks,
weight init) goes through a numba kernel that advances the same state, so a
stream is one canonical xoshiro256++ sequence regardless of how it is consumed.
"""

from __future__ import annotations

import numba
import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def mix_seed(*keys: int) -> int:
    """Fold integer keys into one 64-bit seed (order-sensitive)."""
    acc = 0x6A09E667F3BCC909
    for key in keys:
        _, acc = splitmix64(acc ^ (int(key) & MASK64))
    return acc


@numba.njit(cache=True)
def _fill_uniform(s: np.ndarray, out: np.ndarray) -> None:
    # s: uint64[4] xoshiro256++ state, updated in place.
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    scale = 1.0 / 9007199254740992.0
    for i in range(out.size):
        t = s0 + s3
        result = ((t << np.uint64(23)) | (t >> np.uint64(41))) + s0
        tt = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= tt
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        out[i] = float(result >> np.uint64(11)) * scale
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3


class Rng:
    """xoshiro256++ generator whose 256-bit state comes from splitmix64(seed)."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & MASK64
        sm = self.seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s = words

    @classmethod
    def derive(cls, *keys: int) -> "Rng":
        """Independent stream for a tuple of keys, e.g. (master, cell, run)."""
        return cls(mix_seed(*keys))

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        # rejection sampling keeps the draw unbiased
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        state = np.array(self._s, dtype=np.uint64)
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        _fill_uniform(state, out)
        self._s = [int(v) for v in state]
        return (low + (high - low) * out).reshape(shape)

    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)
