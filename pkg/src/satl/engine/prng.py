"""Seeded xoshiro256** pseudo-random generator.

Every stochastic step in the package (weight init, shuffling, latent noise,
synthetic geometry) draws from a Prng so a 64-bit seed fully determines the
run. The raw integer stream is bit-exact across runs and platforms; derived
floats (Box-Muller normals) additionally depend on the platform libm, which
is identical between the two kernel backends on a given machine.
"""

import math

import numpy as np

from ..backend import kernels
from ..errors import ContractError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (output, advanced state)."""
    x = (x + _GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), x


def _mix(a: int, b: int) -> int:
    """Combine a seed with a stream key into a new 64-bit seed."""
    z = (a ^ ((b * 0xBF58476D1CE4E5B9) & _MASK64)) & _MASK64
    z, _ = _splitmix64(z)
    return z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Prng:
    """xoshiro256** stream addressed by a 64-bit seed.

    `split(*keys)` derives an independent child stream from the parent's
    seed and an integer key path, which is how the pipeline gives each
    epoch / dataset item / phase its own reproducible randomness.
    """

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int):
        if not isinstance(seed, int):
            raise ContractError(f"seed must be an int, got {type(seed).__name__}")
        self.seed = seed & _MASK64
        state = []
        x = self.seed
        for _ in range(4):
            out, x = _splitmix64(x)
            state.append(out)
        if not any(state):  # the all-zero state is invalid for xoshiro
            state[0] = 1
        self._s = state

    def split(self, *keys: int) -> "Prng":
        """Independent child stream for the given integer key path."""
        if not keys:
            raise ContractError("split() requires at least one key")
        x = self.seed
        for k in keys:
            if not isinstance(k, int):
                raise ContractError("split keys must be ints")
            x = _mix(x, k & _MASK64)
        return Prng(x)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    # -- float draws --------------------------------------------------------

    def uniform(self, shape=None) -> "float | np.ndarray":
        """Uniforms in [0, 1); scalar when shape is None."""
        if shape is None:
            return (self.next_u64() >> 11) * _INV_2_53
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        state = np.array(self._s, dtype=np.uint64)
        kernels.prng_fill_uniform(state, out, False)
        self._s = [int(v) for v in state]
        return out.reshape(shape)

    def normal(self, shape=None) -> "float | np.ndarray":
        """Standard normals via Box-Muller; scalar draws still consume a pair."""
        if shape is None:
            return float(self.normal((1,))[0])
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        state = np.array(self._s, dtype=np.uint64)
        kernels.prng_fill_normal(state, out)
        self._s = [int(v) for v in state]
        return out.reshape(shape)

    # -- integer draws -------------------------------------------------------

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via bitmask rejection."""
        if n <= 0:
            raise ContractError("randbelow requires n >= 1")
        if n == 1:
            return 0
        k = (n - 1).bit_length()
        while True:
            r = self.next_u64() >> (64 - k)
            if r < n:
                return r

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def uniform_in(self, lo: float, hi: float) -> float:
        """Uniform scalar in [lo, hi)."""
        return lo + (hi - lo) * self.uniform()

    def __repr__(self) -> str:
        return f"Prng(seed={self.seed:#x})"


def gaussian_pair(u1: float, u2: float) -> tuple[float, float]:
    """Box-Muller transform of (u1 in (0,1], u2 in [0,1)); used by oracles."""
    r = math.sqrt(-2.0 * math.log(u1))
    theta = 2.0 * math.pi * u2
    return r * math.cos(theta), r * math.sin(theta)
