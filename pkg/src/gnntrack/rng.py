"""Seedable counter-based random streams.

Raw 64-bit words come from Philox4x64-10 keyed by ``(seed, stream)`` with the
counter starting at zero (``numpy.random.Philox(key=...)``). Uniform doubles
take the top 53 bits: ``(word >> 11) * 2**-53``. Normals use Box-Muller on
consecutive uniform pairs ``(u1, u2)``::

    r = sqrt(-2 ln(1 - u1))
    z0 = r cos(2 pi u2), z1 = r sin(2 pi u2)

emitted in the order z0, z1, z0', z1', ... Any implementation of Philox and
these two formulas reproduces the streams exactly.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_INV53 = 1.0 / (1 << 53)


class CounterRNG:
    def __init__(self, seed: int, stream: int = 0):
        key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)
        self.seed = seed
        self.stream = stream

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64).reshape(n)

    def uniform(self, n: int | None = None, low: float = 0.0, high: float = 1.0):
        k = 1 if n is None else n
        u = (self.raw(k) >> np.uint64(11)).astype(np.float64) * _INV53
        out = low + (high - low) * u
        return float(out[0]) if n is None else out

    def normal(self, n: int | None = None, sigma: float = 1.0):
        k = 1 if n is None else n
        pairs = (k + 1) // 2
        u = self.uniform(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        out = sigma * z[:k]
        return float(out[0]) if n is None else out

    def bernoulli(self, p: float, n: int) -> np.ndarray:
        return self.uniform(n) < p

    def poisson(self, lam: float) -> int:
        """Knuth's multiplication method; fine for the small rates used here."""
        if lam <= 0.0:
            return 0
        limit = math.exp(-lam)
        k = 0
        prod = self.uniform()
        while prod > limit:
            k += 1
            prod *= self.uniform()
        return k

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        u = self.uniform(n)
        return np.minimum(low + np.floor(u * (high - low)).astype(np.int64), high - 1)


def glorot_uniform(rng: CounterRNG, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(fan_in * fan_out, -bound, bound).reshape(fan_in, fan_out)
