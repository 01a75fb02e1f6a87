"""Tests for the exact-distribution oracles and their MC cross-checks."""

import math
from fractions import Fraction

import numpy as np
import pytest

from lpgd.lpfloat import FloatFormat
from lpgd.objectives import make_objective
from lpgd.oracle import (
    McEstimate,
    bias_scaling_curve,
    check_expectation,
    check_float_drift,
    check_small_step_second_moment,
    difference_distribution,
    dist_mean,
    dist_moment,
    dist_variance,
    exact_grad,
    exact_rounded_grad_mean,
    fit_log_slope,
    fixed_round_distribution,
    float_round_distribution,
    float_update_mean,
    input_corner_distribution,
    mc_round_mean,
    mc_rounded_grad_mean,
    second_moment_small_step,
)
from lpgd.qnum import QFormat
from lpgd.rounding import parse_scheme

Q88 = QFormat(8, 8)
SR = parse_scheme("sr")
RN = parse_scheme("rn")
FP8 = FloatFormat(3, 5)


class TestMcEstimate:
    def test_z_and_ok(self):
        est = McEstimate(mean=0.52, se=0.01, n=100, expected=0.5)
        assert est.z == pytest.approx(2.0)
        assert est.ok
        assert not McEstimate(mean=0.55, se=0.01, n=100, expected=0.5).ok

    def test_zero_se_exact_match(self):
        est = McEstimate(mean=0.5, se=0.0, n=10, expected=0.5)
        assert est.z == 0.0 and est.ok

    def test_zero_se_mismatch_is_infinite(self):
        est = McEstimate(mean=0.6, se=0.0, n=10, expected=0.5)
        assert est.z == math.inf and not est.ok

    def test_str_mentions_verdict(self):
        assert "[ok]" in str(McEstimate(mean=0.5, se=0.1, n=4, expected=0.5))


class TestFixedDistributions:
    def test_sr_two_point_law(self):
        # 0.3 on Q8.8 sits 0.8 u above 76/256
        d = fixed_round_distribution(Fraction(3, 10), Q88, SR)
        assert d == {Fraction(76, 256): Fraction(1, 5), Fraction(77, 256): Fraction(4, 5)}
        assert dist_mean(d) == Fraction(3, 10)

    def test_rn_tie_goes_even(self):
        d = fixed_round_distribution(Fraction(153, 512), Q88, RN)  # 76.5 / 256
        assert d == {Fraction(76, 256): Fraction(1)}

    def test_clamped_eps_is_deterministic(self):
        d = fixed_round_distribution(Fraction(3, 10), Q88, parse_scheme("sr_eps:0.25"))
        assert d == {Fraction(77, 256): Fraction(1)}

    def test_on_grid_is_identity(self):
        d = fixed_round_distribution(Fraction(19, 64), Q88, SR)
        assert d == {Fraction(19, 64): Fraction(1)}

    def test_upper_neighbor_out_of_range_raises(self):
        with pytest.raises(OverflowError):
            fixed_round_distribution(Q88.max_value + Fraction(1, 1000), Q88, SR)

    def test_moments(self):
        d = {Fraction(0): Fraction(1, 2), Fraction(1): Fraction(1, 2)}
        assert dist_mean(d) == Fraction(1, 2)
        assert dist_moment(d, 2) == Fraction(1, 2)
        assert dist_variance(d) == Fraction(1, 4)

    def test_difference_distribution(self):
        d = {Fraction(0): Fraction(1, 2), Fraction(1): Fraction(1, 2)}
        diff = difference_distribution(d, d)
        assert diff == {
            Fraction(-1): Fraction(1, 4),
            Fraction(0): Fraction(1, 2),
            Fraction(1): Fraction(1, 4),
        }
        assert dist_mean(diff) == 0


class TestFloatDistributions:
    def test_two_point_law_on_binade(self):
        d = float_round_distribution(Fraction(11, 10), FP8, SR)
        assert d == {Fraction(1): Fraction(3, 5), Fraction(5, 4): Fraction(2, 5)}

    def test_representable_is_point_mass(self):
        d = float_round_distribution(Fraction(5, 4), FP8, SR)
        assert d == {Fraction(5, 4): Fraction(1)}


class TestMcAgainstExact:
    def test_sr_expectation_check_passes(self):
        est = check_expectation(Fraction(3, 10), Q88, SR, n=20_000, seed=1)
        assert est.ok
        assert est.expected == pytest.approx(0.3)

    def test_mc_round_mean_deterministic_scheme(self):
        got = mc_round_mean(Fraction(3, 10), Q88, RN, n=50, seed=0)
        assert got == pytest.approx(77 / 256)


class TestSmallStepSecondMoment:
    def test_sr_formula_matches_exactly(self):
        u = Q88.u
        exact, formula = second_moment_small_step(u / 5, Q88, SR)
        assert exact == formula == u * u / 5

    def test_eps_interior_branch(self):
        u = Q88.u
        scheme = parse_scheme("sr_eps:0.25")
        exact, formula = second_moment_small_step(u / 5, Q88, scheme)
        assert exact == formula == Fraction(45, 100) * u * u

    def test_eps_clamped_branch(self):
        u = Q88.u
        scheme = parse_scheme("sr_eps:0.25")
        exact, formula = second_moment_small_step(u * Fraction(9, 10), Q88, scheme)
        assert exact == formula == u * u

    def test_zero_step(self):
        exact, formula = second_moment_small_step(0, Q88, SR)
        assert exact == formula == 0

    def test_rn_has_no_formula(self):
        with pytest.raises(ValueError):
            second_moment_small_step(Q88.u / 5, Q88, RN)

    def test_large_value_rejected(self):
        with pytest.raises(ValueError):
            second_moment_small_step(Q88.u, Q88, SR)

    def test_mc_route_agrees(self):
        exact, formula, mc = check_small_step_second_moment(
            Q88.u / 5, Q88, SR, n=20_000, seed=3
        )
        assert exact == formula
        assert mc.ok


class TestPipelineBias:
    def test_exact_grad_matches_analytic(self):
        obj = make_objective("himmelblau")
        g = exact_grad(obj, [Fraction(5, 2), Fraction(3, 2)])
        ref = obj.grad(np.array([2.5, 1.5]))
        assert [float(v) for v in g] == ref.tolist()

    def test_corner_probabilities_sum_to_one(self):
        corners = input_corner_distribution(
            [Fraction(3, 10), Fraction(7, 10)], Q88, SR
        )
        assert len(corners) == 4
        assert sum(p for _, p in corners) == 1

    def test_linear_recipe_has_zero_bias(self):
        # sub and integer coef are exact, the input quantization is SR:
        # the whole pipeline is unbiased, exactly
        obj = make_objective("quadratic", a_diag=[3], x_star=[0])
        mean = exact_rounded_grad_mean(obj, [Fraction(3, 10)], Q88, SR)
        assert mean == (Fraction(9, 10),)

    def test_zero_bias_curve_has_no_slope(self):
        obj = make_objective("quadratic", a_diag=[3], x_star=[0])
        curve = bias_scaling_curve(
            obj, [Fraction(3, 10)], [QFormat(8, 4), QFormat(8, 6)], SR
        )
        with pytest.raises(ValueError):
            fit_log_slope(curve)

    def test_nonlinear_bias_scales_like_u_squared(self):
        obj = make_objective("himmelblau")
        x = [Fraction(3, 10), Fraction(7, 10)]
        fmts = [QFormat(7, 3), QFormat(7, 4), QFormat(7, 5)]
        curve = bias_scaling_curve(obj, x, fmts, SR)
        slope = fit_log_slope(curve)
        assert 1.6 <= slope <= 2.4

    def test_mc_pipeline_agrees_with_enumeration(self):
        obj = make_objective("himmelblau")
        x = [Fraction(3, 10), Fraction(7, 10)]
        fmt = QFormat(7, 3)
        expected = exact_rounded_grad_mean(obj, x, fmt, SR)
        mean, se = mc_rounded_grad_mean(obj, x, fmt, SR, n=3_000, seed=2)
        z = (mean - np.array([float(v) for v in expected])) / se
        assert (np.abs(z) <= 4).all()


class TestFloatDrift:
    def test_sr_realizes_intended_step(self):
        chk = check_float_drift(1, Fraction(1, 2), Fraction(1, 64), FP8, SR, n=4_000)
        assert chk.exact_mean == chk.formula == Fraction(1, 128)
        assert chk.ok

    def test_signed_drift_positive_gradient(self):
        scheme = parse_scheme("signed_sr_eps:0.1")
        chk = check_float_drift(1, Fraction(1, 2), Fraction(1, 64), FP8, scheme, n=4_000)
        assert chk.exact_mean == chk.formula == Fraction(13, 640)
        assert chk.ok

    def test_signed_drift_negative_gradient(self):
        scheme = parse_scheme("signed_sr_eps:0.1")
        chk = check_float_drift(1, Fraction(-1, 2), Fraction(1, 64), FP8, scheme, n=4_000)
        assert chk.exact_mean == chk.formula == Fraction(-21, 640)
        assert chk.ok

    def test_clamped_probability_rejected(self):
        scheme = parse_scheme("signed_sr_eps:0.95")
        with pytest.raises(ValueError):
            check_float_drift(1, Fraction(1, 2), Fraction(1, 64), FP8, scheme, n=10)

    def test_no_formula_for_rn(self):
        with pytest.raises(ValueError):
            check_float_drift(1, Fraction(1, 2), Fraction(1, 64), FP8, RN, n=10)

    def test_update_mean_for_on_grid_step(self):
        # x - step lands on the grid: the mean realized step is exact
        got = float_update_mean(1, Fraction(1, 4), FP8, SR)
        assert got == Fraction(1, 4)
