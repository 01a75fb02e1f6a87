"""Two's-complement fixed-point formats and exact arithmetic on them.

Values are stored as integer mantissas: a Q(qi).(qf) number with mantissa m
represents m * 2**-qf.  Everything here is exact; rounding into a format is
the job of the `rounding` module.  Out-of-range results raise OverflowError
(saturation is never silent).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

# Anything we can convert to an exact rational without loss.
ExactReal = Union[int, float, Fraction]

_Q_PATTERN = re.compile(r"^[Qq](\d+)\.(\d+)$")


def to_fraction(x: ExactReal) -> Fraction:
    """Exact rational value of x (floats via their binary64 expansion)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if x != x or x in (float("inf"), float("-inf")):
            raise ValueError(f"not a finite value: {x!r}")
        return Fraction(x)
    raise TypeError(f"cannot interpret {type(x).__name__} as an exact real")


@dataclass(frozen=True)
class QFormat:
    """Signed fixed-point format with qi integer bits and qf fractional bits.

    The sign bit counts toward qi, so Q8.8 spans [-128, 128 - 2**-8] in steps
    of 2**-8 and occupies 16 bits.
    """

    qi: int
    qf: int

    def __post_init__(self) -> None:
        if self.qi < 1:
            raise ValueError(f"need at least one integer (sign) bit, got qi={self.qi}")
        if self.qf < 0:
            raise ValueError(f"fractional bits must be >= 0, got qf={self.qf}")
        if self.qi + self.qf > 63:
            raise ValueError(f"Q{self.qi}.{self.qf} does not fit in 64-bit mantissas")

    @property
    def scale(self) -> int:
        """Mantissa units per 1.0, i.e. 2**qf."""
        return 1 << self.qf

    @property
    def u(self) -> Fraction:
        """Grid spacing 2**-qf."""
        return Fraction(1, self.scale)

    @property
    def min_mantissa(self) -> int:
        return -(1 << (self.qi + self.qf - 1))

    @property
    def max_mantissa(self) -> int:
        return (1 << (self.qi + self.qf - 1)) - 1

    @property
    def min_value(self) -> Fraction:
        return Fraction(self.min_mantissa, self.scale)

    @property
    def max_value(self) -> Fraction:
        return Fraction(self.max_mantissa, self.scale)

    def holds_exactly(self, x: ExactReal) -> bool:
        """True when x lies on this grid and inside the range."""
        v = to_fraction(x) * self.scale
        return v.denominator == 1 and self.min_mantissa <= v <= self.max_mantissa

    def check_mantissa(self, m: int) -> int:
        """Return m unchanged, or raise OverflowError when out of range."""
        if not self.min_mantissa <= m <= self.max_mantissa:
            raise OverflowError(
                f"value {m}*2^-{self.qf} is outside {self} "
                f"[{float(self.min_value)}, {float(self.max_value)}]"
            )
        return m

    def __str__(self) -> str:
        return f"Q{self.qi}.{self.qf}"


def parse_rational(value: Union[str, ExactReal]) -> Fraction:
    """Exact rational from '2^-10', '3/250', '0.012', a number, or a Fraction.

    Strings parse exactly (decimal text means the decimal, not its binary64
    image); bare floats are taken at their exact binary64 value.
    """
    if isinstance(value, str):
        text = value.strip()
        m = re.match(r"^([+-]?\d+)\^([+-]?\d+)$", text)
        if m:
            base, exp = int(m.group(1)), int(m.group(2))
            return Fraction(base) ** exp
        return Fraction(text)
    return to_fraction(value)


def make_format(spec: Union[str, QFormat], qf: Union[int, None] = None) -> QFormat:
    """Build a QFormat from 'Q<qi>.<qf>', from (qi, qf) ints, or pass through."""
    if isinstance(spec, QFormat):
        return spec
    if isinstance(spec, int):
        if qf is None:
            raise TypeError("make_format(qi, qf) needs both bit counts")
        return QFormat(spec, qf)
    if isinstance(spec, (tuple, list)):
        qi_, qf_ = spec
        return QFormat(int(qi_), int(qf_))
    m = _Q_PATTERN.match(spec.strip())
    if not m:
        raise ValueError(f"not a fixed-point format spec: {spec!r}")
    return QFormat(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class FixedVal:
    """One fixed-point number: integer mantissa m in format fmt."""

    m: int
    fmt: QFormat

    def __post_init__(self) -> None:
        self.fmt.check_mantissa(self.m)

    @property
    def value(self) -> Fraction:
        return Fraction(self.m, self.fmt.scale)

    def __float__(self) -> float:
        return self.m / self.fmt.scale

    def __str__(self) -> str:
        return f"{float(self)}[{self.fmt}]"


def from_exact(x: ExactReal, fmt: QFormat) -> FixedVal:
    """Wrap a value that must already be representable in fmt."""
    v = to_fraction(x) * fmt.scale
    if v.denominator != 1:
        raise ValueError(f"{x} is not on the {fmt} grid (u = 2^-{fmt.qf})")
    return FixedVal(int(v), fmt)


def floor_fx(x: ExactReal, fmt: QFormat) -> FixedVal:
    """Largest grid point <= x.  Raises OverflowError when x is out of range."""
    v = to_fraction(x)
    if not fmt.min_value <= v <= fmt.max_value:
        raise OverflowError(f"{float(v)} is outside the range of {fmt}")
    num = v.numerator * fmt.scale
    return FixedVal(num // v.denominator, fmt)


def add_exact(a: FixedVal, b: FixedVal) -> FixedVal:
    """Exact same-format addition; overflow is a hard error."""
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} + {b.fmt}")
    return FixedVal(a.m + b.m, a.fmt)


def sub_exact(a: FixedVal, b: FixedVal) -> FixedVal:
    """Exact same-format subtraction; overflow is a hard error."""
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} - {b.fmt}")
    return FixedVal(a.m - b.m, a.fmt)


def mul_exact(a: FixedVal, b: FixedVal) -> Fraction:
    """Exact product of two fixed-point values (qf_a + qf_b fractional bits)."""
    return Fraction(a.m * b.m, a.fmt.scale * b.fmt.scale)


def mul_round(a, b, out_fmt, scheme, stream=None, k=0, tag=0, v_sign=0):
    """Exact product of a and b, then a single rounding into out_fmt.

    a and b are FixedVal; the product is formed at qf_a + qf_b fractional
    bits before the one rounding (no intermediate truncation).
    """
    from . import rounding  # deferred; rounding depends on this module's types

    return rounding.round(mul_exact(a, b), out_fmt, scheme, stream, k, tag, v_sign)


# ---------------------------------------------------------------------------
# vectors of fixed-point values (the engine's iterate representation)
# ---------------------------------------------------------------------------


@dataclass
class FixedVec:
    """A vector of same-format fixed-point values, mantissas as int64."""

    m: np.ndarray
    fmt: QFormat

    def __post_init__(self) -> None:
        self.m = np.asarray(self.m, dtype=np.int64)
        lo, hi = self.fmt.min_mantissa, self.fmt.max_mantissa
        if self.m.size and (self.m.min() < lo or self.m.max() > hi):
            bad = self.m[(self.m < lo) | (self.m > hi)][0]
            raise OverflowError(f"mantissa {int(bad)} outside {self.fmt}")

    @property
    def n(self) -> int:
        return int(self.m.size)

    def to_floats(self) -> np.ndarray:
        return self.m / self.fmt.scale

    def to_fractions(self) -> list[Fraction]:
        return [Fraction(int(mi), self.fmt.scale) for mi in self.m]

    def __getitem__(self, i: int) -> FixedVal:
        return FixedVal(int(self.m[i]), self.fmt)

    def copy(self) -> "FixedVec":
        return FixedVec(self.m.copy(), self.fmt)


def vec_from_exact(xs, fmt: QFormat) -> FixedVec:
    """Build a FixedVec from values that must all be representable in fmt."""
    return FixedVec(
        np.array([from_exact(x, fmt).m for x in xs], dtype=np.int64), fmt
    )
