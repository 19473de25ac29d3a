"""Deterministic random streams for the Monte Carlo harness.

A xoshiro256** generator seeded through splitmix64 gives every rollout
its own stream derived from ``(master_seed, rollout_index)``, so adding
rollouts never perturbs earlier ones. Standard normals come from the
Marsaglia polar method.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1


def splitmix64(state):
    """One splitmix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, (z ^ (z >> 31)) & _MASK


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seeding."""

    def __init__(self, seed):
        s = seed & _MASK
        self.s = []
        for _ in range(4):
            s, out = splitmix64(s)
            self.s.append(out)
        self._spare = None

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = ((s1 * 5) & _MASK)
        result = (((result << 7) | (result >> 57)) & _MASK)
        result = (result * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self):
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self):
        """Standard normal via the polar method."""
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            r2 = u * u + v * v
            if 0.0 < r2 < 1.0:
                f = math.sqrt(-2.0 * math.log(r2) / r2)
                self._spare = v * f
                return u * f

    def normals(self, n):
        return [self.normal() for _ in range(n)]


def rollout_stream(master_seed, rollout_index):
    """Independent per-rollout generator from the master seed.

    The rollout index is folded into the seed with a splitmix64 hash so
    streams stay decoupled even for adjacent indices.
    """
    s, h1 = splitmix64((master_seed & _MASK) ^ 0xA0761D6478BD642F)
    _, h2 = splitmix64(s + rollout_index)
    return Xoshiro256StarStar(h1 ^ h2)
