"""Rounding kernels: nearest-even and the stochastic family.

Every kernel rounds an exact value x to one of its two enclosing grid points
low = floor(x) and low + u.  Writing frac = x - low, the round-down
probability is

    rn             1 if frac < u/2, 0 if frac > u/2, ties to the even mantissa
    sr             1 - frac/u
    sr_eps         clamp(1 - frac/u - sign(x) * eps, 0, 1)
    signed_sr_eps  clamp(1 - frac/u - sign(v) * eps, 0, 1)

with sign(v) supplied by the caller (the direction the perturbation should
favor, e.g. the descent step).  A value already on the grid rounds to itself
under every scheme, including the eps-perturbed ones.

Probabilities are exact rationals end to end: the hot path works on integer
ratios num/den = x * 2**qf and draws exact Bernoullis, so there is no hidden
binary64 rounding anywhere in the emulation itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from . import rng
from .qnum import ExactReal, FixedVal, QFormat, to_fraction

SCHEME_KINDS = ("rn", "sr", "sr_eps", "signed_sr_eps")

_INT64_SAFE = 1 << 62


@dataclass(frozen=True)
class RoundScheme:
    """A rounding rule: one of rn / sr / sr_eps / signed_sr_eps."""

    kind: str
    eps: Optional[Fraction] = None

    def __post_init__(self) -> None:
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown rounding scheme {self.kind!r}")
        if self.kind in ("sr_eps", "signed_sr_eps"):
            if self.eps is None or not 0 < self.eps < 1:
                raise ValueError(f"{self.kind} needs eps in (0, 1), got {self.eps}")
        elif self.eps is not None:
            raise ValueError(f"{self.kind} takes no eps")

    @property
    def is_random(self) -> bool:
        return self.kind != "rn"

    @property
    def uses_value_sign(self) -> bool:
        return self.kind == "sr_eps"

    @property
    def uses_given_sign(self) -> bool:
        return self.kind == "signed_sr_eps"

    def __str__(self) -> str:
        if self.eps is None:
            return self.kind
        return f"{self.kind}:{self.eps.numerator}/{self.eps.denominator}"


def parse_scheme(spec: Union[str, RoundScheme]) -> RoundScheme:
    """Parse 'rn', 'sr', 'sr_eps:<eps>' or 'signed_sr_eps:<eps>'.

    eps is read as an exact rational: '0.4' means 2/5, not the binary64
    nearest to 0.4; '2/5' and '1/3' work too.
    """
    if isinstance(spec, RoundScheme):
        return spec
    text = spec.strip()
    if ":" not in text:
        return RoundScheme(text)
    kind, _, eps_text = text.partition(":")
    return RoundScheme(kind.strip(), Fraction(eps_text.strip()))


# ---------------------------------------------------------------------------
# exact scalar kernels
# ---------------------------------------------------------------------------


def _clamp01(p: Fraction) -> Fraction:
    return Fraction(0) if p < 0 else Fraction(1) if p > 1 else p


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def prob_round_down(
    x: ExactReal, fmt: QFormat, scheme: RoundScheme, v_sign: int = 0
) -> Fraction:
    """Exact probability that x rounds to floor(x) on fmt's grid."""
    pos = to_fraction(x) * fmt.scale
    q = pos.numerator // pos.denominator
    frac = pos - q  # frac/u as a fraction of the gap, in [0, 1)
    if frac == 0:
        return Fraction(1)
    if scheme.kind == "rn":
        if 2 * frac < 1:
            return Fraction(1)
        if 2 * frac > 1:
            return Fraction(0)
        return Fraction(1) if q % 2 == 0 else Fraction(0)
    if scheme.kind == "sr":
        return 1 - frac
    s = _sign(pos) if scheme.kind == "sr_eps" else int(v_sign)
    return _clamp01(1 - frac - s * scheme.eps)


def expected_round(
    x: ExactReal, fmt: QFormat, scheme: RoundScheme, v_sign: int = 0
) -> Fraction:
    """Exact E[round(x)] = floor(x) + u * P(round up)."""
    pos = to_fraction(x) * fmt.scale
    q = pos.numerator // pos.denominator
    p_down = prob_round_down(x, fmt, scheme, v_sign)
    return Fraction(q + 1 - p_down, fmt.scale)


def round(
    x: ExactReal,
    fmt: QFormat,
    scheme: RoundScheme,
    stream: Optional[rng.RandomStream] = None,
    k: int = 0,
    tag: int = 0,
    v_sign: int = 0,
) -> FixedVal:
    """Round one exact value into fmt under scheme.

    Random schemes need a RandomStream plus the (iteration, op tag) address;
    rn and already-representable values draw nothing.  Delegates to the
    vector kernel so a value rounds identically whether it arrives alone or
    inside an array.
    """
    v = to_fraction(x)
    if not fmt.min_value <= v <= fmt.max_value:
        raise OverflowError(f"{float(v)} is outside the range of {fmt}")
    p_down = prob_round_down(v, fmt, scheme, v_sign)
    pos = v * fmt.scale
    q = pos.numerator // pos.denominator
    if p_down == 1:
        return FixedVal(q, fmt)
    if p_down == 0:
        return FixedVal(fmt.check_mantissa(q + 1), fmt)
    if stream is None:
        raise ValueError(f"{scheme} needs a RandomStream to round {float(v)}")
    gen = stream.generator(k, tag)
    m = round_ratio_vec(
        np.array([v.numerator], dtype=object), v.denominator, fmt, scheme, gen, v_sign
    )
    return FixedVal(int(m[0]), fmt)


# ---------------------------------------------------------------------------
# vectorized ratio kernel (the engine hot path)
# ---------------------------------------------------------------------------


def _to_int_array(values, force_object: bool) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype != object and not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"ratio numerators must be integers, got dtype {arr.dtype}")
    if force_object:
        return np.array([int(v) for v in np.atleast_1d(arr)], dtype=object)
    if arr.dtype == object:
        # caller already established the values fit
        return np.array([int(v) for v in np.atleast_1d(arr)], dtype=np.int64)
    return np.atleast_1d(arr).astype(np.int64)


def round_ratio_vec(
    num,
    den: int,
    out_fmt: QFormat,
    scheme: RoundScheme,
    gen: Optional[np.random.Generator] = None,
    v_sign=0,
) -> np.ndarray:
    """Round the values num[i]/den onto out_fmt's grid; return int64 mantissas.

    num is an integer array (or scalar), den a positive integer; num/den is
    the exact value in ordinary units, so the grid positions are
    num * 2**qf / den.  One Bernoulli word per element for the stochastic
    schemes; every element consumes its draw even when exact, which keeps the
    draw layout independent of the data.
    """
    if den <= 0:
        raise ValueError(f"denominator must be positive, got {den}")
    scale = out_fmt.scale
    # decide whether the scaled numerators still fit comfortably in int64;
    # the choice depends only on the values, never on the array dtype, so a
    # value rounds through the same path however it was packaged
    probe = np.atleast_1d(np.asarray(num))
    big = False
    if probe.size:
        if probe.dtype == object:
            peak = max(abs(int(v)) for v in probe.flat)
        else:
            peak = max(abs(int(probe.max())), abs(int(probe.min())))
        big = peak * scale >= _INT64_SAFE or den >= _INT64_SAFE
    pos = _to_int_array(num, big) * (scale if not big else int(scale))
    n = pos.size
    den_ = int(den)

    q = pos // den_
    r = pos - q * den_  # in [0, den)
    exact = r == 0

    if scheme.kind == "rn":
        up = (2 * r > den_) | ((2 * r == den_) & ((q & 1) == 1))
    else:
        if gen is None:
            raise ValueError(f"{scheme} needs a Generator")
        if scheme.kind == "sr":
            # P(up) = r/den
            up = rng.bernoulli_lt(gen, r, den_, n) if not big else rng.bernoulli_ratio(gen, r, den_, n)
        else:
            if scheme.uses_value_sign:
                s = np.array([int(v > 0) - int(v < 0) for v in pos], dtype=np.int64)
            else:
                s = np.sign(np.broadcast_to(np.asarray(v_sign), (n,))).astype(np.int64)
            a, b = scheme.eps.numerator, scheme.eps.denominator
            cap = den_ * b
            wide = big or 2 * cap >= _INT64_SAFE
            if wide:
                r_w = np.array([int(v) for v in r], dtype=object)
                s_w = np.array([int(v) for v in s], dtype=object)
            else:
                r_w, s_w = r, s
            # P(up) = clamp(r/den + s*eps, 0, 1) = T / (den*b)
            t_num = r_w * b + s_w * (a * den_)
            t_num = np.where(t_num < 0, 0, t_num)
            t_num = np.where(t_num > cap, cap, t_num)
            if wide:
                up = rng.bernoulli_ratio(gen, t_num, cap, n)
            else:
                up = rng.bernoulli_lt(gen, t_num.astype(np.int64), cap, n)
        up = np.asarray(up, dtype=bool)
        up[exact] = False  # representable values round to themselves

    m = q + up.astype(q.dtype if not big else object)
    lo, hi = out_fmt.min_mantissa, out_fmt.max_mantissa
    bad = (m < lo) | (m > hi)
    if bad.any():
        i = int(np.argmax(bad))
        raise OverflowError(
            f"rounding {int(pos[i])}/{den_} * 2^-{out_fmt.qf} overflows {out_fmt}"
        )
    if big:
        return np.array([int(v) for v in m], dtype=np.int64)
    return m.astype(np.int64)


def round_doubles_vec(
    values: np.ndarray,
    out_fmt: QFormat,
    scheme: RoundScheme,
    gen: Optional[np.random.Generator] = None,
    v_sign=0,
) -> np.ndarray:
    """Round binary64 values (taken as exact dyadics) into out_fmt.

    Each element carries its own power-of-two denominator, so this goes
    through the bitstream Bernoulli rather than the shared-denominator
    kernel.  Used for quantities computed in double (e.g. logistic values)
    that then enter the fixed-point pipeline.
    """
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    n = vals.size
    scale = out_fmt.scale
    q = np.empty(n, dtype=np.int64)
    r_num = np.empty(n, dtype=object)
    r_den = np.empty(n, dtype=object)
    for i, v in enumerate(vals):
        f = Fraction(float(v)) * scale
        qi = f.numerator // f.denominator
        q[i] = qi
        rem = f - qi
        r_num[i] = rem.numerator
        r_den[i] = rem.denominator
    exact = np.array([rn == 0 for rn in r_num], dtype=bool)

    if scheme.kind == "rn":
        half_up = np.array(
            [
                2 * rn > rd or (2 * rn == rd and qm % 2 == 1)
                for rn, rd, qm in zip(r_num, r_den, q)
            ],
            dtype=bool,
        )
        up = half_up
    else:
        if gen is None:
            raise ValueError(f"{scheme} needs a Generator")
        if scheme.kind == "sr":
            up = rng.bernoulli_ratio(gen, r_num, r_den, n)
        else:
            if scheme.uses_value_sign:
                s = np.sign(vals).astype(int)
            else:
                s = np.sign(np.broadcast_to(np.asarray(v_sign), (n,)).astype(int))
            a, b = scheme.eps.numerator, scheme.eps.denominator
            t_num = np.empty(n, dtype=object)
            t_den = np.empty(n, dtype=object)
            for i in range(n):
                tn = r_num[i] * b + int(s[i]) * a * r_den[i]
                td = r_den[i] * b
                t_num[i] = min(max(tn, 0), td)
                t_den[i] = td
            up = rng.bernoulli_ratio(gen, t_num, t_den, n)
        up = np.asarray(up, dtype=bool)
        up[exact] = False

    m = q + up.astype(np.int64)
    lo, hi = out_fmt.min_mantissa, out_fmt.max_mantissa
    if ((m < lo) | (m > hi)).any():
        raise OverflowError(f"double input overflows {out_fmt}")
    return m
