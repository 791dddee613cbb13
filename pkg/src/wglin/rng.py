"""Deterministic PRNG: splitmix64 seeding into xoshiro256**.

Every stochastic choice in the package (weight init, data synthesis,
shuffling) goes through this generator so runs are bit-identical across
platforms. Python's own `random` and numpy's global state are never used.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, (z ^ (z >> 31)) & _MASK


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def mix_seed(seed: int, *streams: int) -> int:
    """Derive a child seed from a root seed and stream identifiers."""
    state = seed & _MASK
    out = 0
    for s in streams:
        state, out = splitmix64((state ^ (s & _MASK)) & _MASK)
    if not streams:
        state, out = splitmix64(state)
    return out


class Rng:
    """xoshiro256** generator with a splitmix64-expanded seed."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        s = self.seed
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self._s = state
        self._spawned = 0

    def u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 bits of precision."""
        return (self.u64() >> 11) * (2.0 ** -53)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        v = int(self.random() * n)
        return min(v, n - 1)

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high] inclusive."""
        return low + self.randrange(high - low + 1)

    def fill_uniform(self, shape: tuple[int, ...], low: float, high: float) -> np.ndarray:
        """Bulk uniform fill: counter-based splitmix64 keyed by one u64 draw.

        Vectorized but still fully determined by the generator state.
        """
        n = int(np.prod(shape)) if shape else 1
        base = np.uint64(self.u64())
        with np.errstate(over="ignore"):
            state = base + (np.arange(1, n + 1, dtype=np.uint64)
                            * np.uint64(0x9E3779B97F4A7C15))
            z = state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        u = (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def shuffle(self, items: list) -> None:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, *streams: int) -> "Rng":
        """Independent child generator; successive calls differ."""
        self._spawned += 1
        return Rng(mix_seed(self.seed, self._spawned, *streams))
