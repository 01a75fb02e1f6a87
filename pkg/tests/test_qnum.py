"""Fixed-point formats, exact values, and overflow behavior."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lpgd.qnum import (
    FixedVal,
    FixedVec,
    QFormat,
    add_exact,
    floor_fx,
    from_exact,
    make_format,
    mul_exact,
    parse_rational,
    sub_exact,
    to_fraction,
    vec_from_exact,
)


class TestQFormat:
    def test_q88_constants(self):
        fmt = QFormat(8, 8)
        assert fmt.scale == 256
        assert fmt.u == Fraction(1, 256)
        assert fmt.min_value == -128
        assert fmt.max_value == Fraction(128 * 256 - 1, 256)

    def test_q11_range(self):
        fmt = QFormat(1, 1)
        assert fmt.min_value == -1
        assert fmt.max_value == Fraction(1, 2)

    def test_parse_spellings(self):
        assert make_format("Q8.8") == QFormat(8, 8)
        assert make_format("Q15.6") == QFormat(15, 6)
        assert make_format((6, 10)) == QFormat(6, 10)
        assert make_format(QFormat(2, 3)) == QFormat(2, 3)

    def test_rejects_bad_widths(self):
        with pytest.raises(ValueError):
            QFormat(0, 8)
        with pytest.raises(ValueError):
            QFormat(40, 40)
        with pytest.raises(ValueError):
            QFormat(8, -1)

    def test_holds_exactly(self):
        fmt = QFormat(8, 8)
        assert fmt.holds_exactly(Fraction(1, 256))
        assert not fmt.holds_exactly(Fraction(1, 512))
        assert not fmt.holds_exactly(Fraction(3, 10))
        assert fmt.holds_exactly(Fraction(-128))
        assert not fmt.holds_exactly(Fraction(128))


class TestParseRational:
    def test_power_of_two(self):
        assert parse_rational("2^-10") == Fraction(1, 1024)
        assert parse_rational("2^3") == 8

    def test_fraction_text(self):
        assert parse_rational("3/250") == Fraction(3, 250)

    def test_decimal_text_is_exact(self):
        assert parse_rational("0.012") == Fraction(3, 250)
        assert parse_rational("0.1") == Fraction(1, 10)

    def test_number_passthrough(self):
        assert parse_rational(Fraction(1, 3)) == Fraction(1, 3)
        assert parse_rational(0.5) == Fraction(1, 2)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            to_fraction(float("nan"))
        with pytest.raises(ValueError):
            to_fraction(float("inf"))


class TestFixedVal:
    def test_from_exact_on_grid(self):
        fx = from_exact(Fraction(3, 4), QFormat(4, 4))
        assert fx.m == 12
        assert fx.value == Fraction(3, 4)

    def test_from_exact_off_grid_raises(self):
        with pytest.raises(ValueError):
            from_exact(Fraction(1, 3), QFormat(4, 4))

    def test_from_exact_out_of_range_raises(self):
        with pytest.raises(OverflowError):
            from_exact(8, QFormat(4, 4))
        assert from_exact(-8, QFormat(4, 4)).m == -128

    def test_floor(self):
        fmt = QFormat(4, 4)
        assert floor_fx(Fraction(33, 64), fmt).m == 8  # 0.515625 -> 0.5
        assert floor_fx(Fraction(-33, 64), fmt).m == -9

    def test_add_sub_exact(self):
        fmt = QFormat(4, 4)
        a = from_exact(Fraction(5, 16), fmt)
        b = from_exact(Fraction(3, 16), fmt)
        assert add_exact(a, b).value == Fraction(1, 2)
        assert sub_exact(a, b).value == Fraction(1, 8)

    def test_add_overflow_is_hard(self):
        fmt = QFormat(2, 2)
        a = from_exact(Fraction(7, 4), fmt)
        with pytest.raises(OverflowError):
            add_exact(a, a)

    def test_mul_exact_is_a_fraction(self):
        fmt = QFormat(4, 4)
        a = from_exact(Fraction(5, 16), fmt)
        b = from_exact(Fraction(3, 16), fmt)
        assert mul_exact(a, b) == Fraction(15, 256)


class TestFixedVec:
    def test_roundtrip(self):
        fmt = QFormat(8, 8)
        v = vec_from_exact([Fraction(1, 2), -2, Fraction(255, 256)], fmt)
        assert v.to_fractions() == [Fraction(1, 2), -2, Fraction(255, 256)]
        np.testing.assert_allclose(v.to_floats(), [0.5, -2.0, 255 / 256])

    def test_range_validated_both_sides(self):
        fmt = QFormat(2, 2)
        with pytest.raises(OverflowError):
            FixedVec(np.array([fmt.max_mantissa + 1]), fmt)
        with pytest.raises(OverflowError):
            FixedVec(np.array([fmt.min_mantissa - 1]), fmt)

    def test_copy_is_independent(self):
        fmt = QFormat(8, 8)
        v = vec_from_exact([1, 2], fmt)
        w = v.copy()
        w.m[0] = 0
        assert v.m[0] == 256


@given(
    qi=st.integers(min_value=1, max_value=16),
    qf=st.integers(min_value=0, max_value=16),
    m=st.integers(),
)
def test_mantissa_range_check_matches_bounds(qi, qf, m):
    fmt = QFormat(qi, qf)
    in_range = fmt.min_mantissa <= m <= fmt.max_mantissa
    if in_range:
        assert fmt.check_mantissa(m) == m
    else:
        with pytest.raises(OverflowError):
            fmt.check_mantissa(m)


@given(
    qf=st.integers(min_value=0, max_value=12),
    num=st.integers(min_value=-(2**20), max_value=2**20),
    den=st.integers(min_value=1, max_value=2**12),
)
def test_floor_never_exceeds_value(qf, num, den):
    fmt = QFormat(12, qf)
    x = Fraction(num, den)
    if not fmt.min_value <= x <= fmt.max_value:
        return
    fx = floor_fx(x, fmt)
    assert fx.value <= x < fx.value + fmt.u
