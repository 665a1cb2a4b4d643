"""Counter-based random numbers (philox4x64, 10 rounds).

Draws are a pure function of (seed, batch, particle, block), so particle
histories are reproducible independent of thread count and scheduling, and
both tally backends can replay identical randomness. Each block yields four
uniform doubles in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, uint64

_M0 = uint64(0xD2E7470EE14C6C93)
_M1 = uint64(0xCA5A826395121157)
_W0 = uint64(0x9E3779B97F4A7C15)
_W1 = uint64(0xBB67AE8584CAA73B)
_KEY1 = uint64(0xD1B54A32D192ED03)  # fixed second key word

_U53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(inline="always", cache=True)
def _mulhilo64(a, b):
    lo = a * b
    a_lo = a & uint64(0xFFFFFFFF)
    a_hi = a >> uint64(32)
    b_lo = b & uint64(0xFFFFFFFF)
    b_hi = b >> uint64(32)
    t = a_lo * b_hi + ((a_lo * b_lo) >> uint64(32))
    hi = (a_hi * b_hi + (t >> uint64(32))
          + ((a_hi * b_lo + (t & uint64(0xFFFFFFFF))) >> uint64(32)))
    return hi, lo


@njit(inline="always", cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """One philox4x64-10 block: four uint64 words from counter and key."""
    for _ in range(10):
        hi0, lo0 = _mulhilo64(_M0, c0)
        hi1, lo1 = _mulhilo64(_M1, c2)
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0, c1, c2, c3 = n0, lo1, n2, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit(inline="always", cache=True)
def _to_unit(word):
    # (0, 1]: safe argument for log()
    return (float(word >> uint64(11)) + 1.0) * _U53


@njit(inline="always", cache=True)
def uniform_block(seed, batch, particle, block):
    """Four uniforms in (0, 1] for one (seed, batch, particle, block) key."""
    w0, w1, w2, w3 = philox4x64(
        uint64(block), uint64(particle), uint64(batch), uint64(0),
        uint64(seed), _KEY1)
    return _to_unit(w0), _to_unit(w1), _to_unit(w2), _to_unit(w3)


@njit(cache=True)
def _raw_block(c0, c1, c2, c3, k0, k1):
    w = philox4x64(uint64(c0), uint64(c1), uint64(c2), uint64(c3),
                   uint64(k0), uint64(k1))
    out = np.empty(4, dtype=np.uint64)
    out[0], out[1], out[2], out[3] = w
    return out


def raw_block(counter, key) -> np.ndarray:
    """Raw philox words for explicit counter/key (testing hook)."""
    c = [int(v) & 0xFFFFFFFFFFFFFFFF for v in counter]
    k = [int(v) & 0xFFFFFFFFFFFFFFFF for v in key]
    if len(c) != 4 or len(k) != 2:
        raise ValueError("counter must have 4 words and key 2 words")
    return _raw_block(c[0], c[1], c[2], c[3], k[0], k[1])


@njit(cache=True)
def _uniform_block_arr(seed, batch, particle, block):
    u0, u1, u2, u3 = uniform_block(seed, batch, particle, block)
    out = np.empty(4)
    out[0], out[1], out[2], out[3] = u0, u1, u2, u3
    return out


@dataclass
class RngStream:
    """Convenience cursor over one particle's keyed uniform stream."""

    seed: int
    batch: int = 0
    particle: int = 0
    _block: int = 0
    _buf: list = field(default_factory=list, repr=False)

    def next_uniform(self) -> float:
        if not self._buf:
            vals = _uniform_block_arr(self.seed, self.batch, self.particle,
                                      self._block)
            self._block += 1
            self._buf = list(vals)[::-1]
        return self._buf.pop()

    def next_block(self) -> tuple[float, float, float, float]:
        """Four uniforms from a fresh block (discards a partial buffer)."""
        self._buf = []
        vals = _uniform_block_arr(self.seed, self.batch, self.particle,
                                  self._block)
        self._block += 1
        return tuple(vals)
