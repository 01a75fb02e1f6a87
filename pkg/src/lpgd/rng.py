"""Counter-based randomness with exact-rational Bernoulli draws.

Every rounding op in a run is addressed by (seed, iteration, op tag).  Each
address gets its own Philox generator whose 256-bit counter starts at
(0, 0, iteration, tag), so distinct addresses are 2**128 draws apart and can
never collide however many uniforms one op consumes.  Replaying a run with
the same seed reproduces every draw; runs with different seeds are
independent streams.

Bernoulli draws take their probability as an exact integer ratio num/den and
are exact: a uniform r on [0, den) is compared against num.  Power-of-two
denominators mask the low bits of a 64-bit word; anything else goes through
rejection sampling.
"""

from __future__ import annotations

import numpy as np

_KEY_SALT = 0x9E3779B97F4A7C15  # fixed second key lane, golden-ratio odd word
_MASK64 = (1 << 64) - 1
_FULL = 1 << 64


class RandomStream:
    """Philox-backed uniform source addressed by (iteration, op tag)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def generator(self, k: int, tag: int) -> np.random.Generator:
        """Fresh generator for op `tag` of iteration `k`."""
        bg = np.random.Philox(
            key=[self.seed, _KEY_SALT],
            counter=[0, 0, int(k) & _MASK64, int(tag) & _MASK64],
        )
        return np.random.Generator(bg)

    def u64(self, k: int, tag: int, n: int) -> np.ndarray:
        """n uniform 64-bit words for op (k, tag)."""
        return self.generator(k, tag).integers(0, _FULL, size=n, dtype=np.uint64)


def uniform_below(gen: np.random.Generator, den: int, n: int) -> np.ndarray:
    """n exact uniforms on [0, den) as uint64 (object array when den > 2**64)."""
    if den <= 0:
        raise ValueError(f"denominator must be positive, got {den}")
    if den > _FULL:
        # chain two words per draw; dens this large never occur on hot paths
        words = gen.integers(0, _FULL, size=2 * n, dtype=np.uint64)
        big = [
            (int(words[2 * i]) << 64) | int(words[2 * i + 1]) for i in range(n)
        ]
        lim = ((1 << 128) // den) * den
        out = []
        for v in big:
            while v >= lim:
                w = gen.integers(0, _FULL, size=2, dtype=np.uint64)
                v = (int(w[0]) << 64) | int(w[1])
            out.append(v % den)
        return np.array(out, dtype=object)
    u = gen.integers(0, _FULL, size=n, dtype=np.uint64)
    if den & (den - 1) == 0:
        # power of two: low bits are already uniform on [0, den)
        return u & np.uint64(den - 1)
    # only powers of two divide 2**64, so lim < 2**64 here
    lim = (_FULL // den) * den  # rejection keeps the draw exactly uniform
    bad = u >= np.uint64(lim)
    while bad.any():
        u[bad] = gen.integers(0, _FULL, size=int(bad.sum()), dtype=np.uint64)
        bad = u >= np.uint64(lim)
    return u % np.uint64(den)


def bernoulli_lt(gen: np.random.Generator, nums, den: int, n: int) -> np.ndarray:
    """Boolean vector, element i True with probability nums[i]/den, exactly.

    nums may be a scalar or an array of integers in [0, den]; probabilities
    0 and 1 come out deterministic.
    """
    r = uniform_below(gen, den, n)
    if r.dtype == object:
        nums = np.asarray(nums, dtype=object)
    else:
        nums = np.asarray(nums, dtype=np.uint64)
    return r < nums


def bernoulli_ratio(gen: np.random.Generator, nums, dens, n: int) -> np.ndarray:
    """Exact Bernoulli(nums[i]/dens[i]) vector for per-element denominators.

    Compares a uniform bitstream against the target probability 64 bits at a
    time: the first word decides unless it lands exactly on the probability's
    64-bit prefix (chance 2**-64 per element), in which case more words
    resolve the remainder.  One word per element in practice, any rational
    probability, no rejection loop.
    """
    nums = np.asarray(nums, dtype=object).reshape(-1)
    dens = np.asarray(dens, dtype=object).reshape(-1)
    if nums.size == 1:
        nums = np.repeat(nums, n)
    if dens.size == 1:
        dens = np.repeat(dens, n)
    out = np.zeros(n, dtype=bool)
    idx = np.arange(n)
    while idx.size:
        u = gen.integers(0, _FULL, size=idx.size, dtype=np.uint64)
        next_idx = []
        for j, i in enumerate(idx):
            num, den = nums[i], dens[i]
            hi, rem = divmod(num << 64, den)
            w = int(u[j])
            if w < hi:
                out[i] = True
            elif w == hi and rem:
                nums[i] = rem  # undecided: recurse on the remainder bits
                next_idx.append(i)
        idx = np.array(next_idx, dtype=np.int64)
    return out
