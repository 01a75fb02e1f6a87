"""Exact finite-case analyses paired with Monte Carlo consistency checks.

The rounding kernels are simple enough that small configurations can be
solved in closed form with Fractions: full output distributions of one or
two roundings, conditional second moments of the update, the quantization
bias of a gradient recipe, and the mean drift of a float update in the
near-stagnation regime.  Each exact result here comes with an MC
counterpart so a disagreement points at whichever side broke.

Convention for agreement checks: a sample mean is consistent when it sits
within `se_mult` standard errors (default 4) of the exact value, with the
standard error computed from the exact distribution where available.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import lpfloat, rounding
from .objectives import FractionBackend, Objective, enumerate_recipe
from .qnum import ExactReal, QFormat, to_fraction
from .rng import RandomStream

Dist = Dict[Fraction, Fraction]


@dataclass
class McEstimate:
    """A sample mean against its exact target."""

    mean: float
    se: float
    n: int
    expected: float
    se_mult: float = 4.0

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.mean == self.expected else math.inf
        return (self.mean - self.expected) / self.se

    @property
    def ok(self) -> bool:
        return abs(self.z) <= self.se_mult

    def __str__(self) -> str:
        return (
            f"mean={self.mean:.6g} expected={self.expected:.6g} "
            f"se={self.se:.2g} z={self.z:+.2f} n={self.n} "
            f"[{'ok' if self.ok else 'FAIL'}]"
        )


# ---------------------------------------------------------------------------
# exact distributions of one or two roundings
# ---------------------------------------------------------------------------


def fixed_round_distribution(
    x: ExactReal, fmt: QFormat, scheme: rounding.RoundScheme, v_sign: int = 0
) -> Dist:
    """Exact two-point distribution of round(x) on fmt's grid."""
    v = to_fraction(x)
    pos = v * fmt.scale
    q = pos.numerator // pos.denominator
    p_down = rounding.prob_round_down(v, fmt, scheme, v_sign)
    lo = Fraction(q, fmt.scale)
    hi = Fraction(q + 1, fmt.scale)
    for val in (lo,) if p_down == 1 else (lo, hi):
        fmt.check_mantissa(int(val * fmt.scale))
    if p_down == 1:
        return {lo: Fraction(1)}
    if p_down == 0:
        return {hi: Fraction(1)}
    return {lo: p_down, hi: 1 - p_down}


def float_round_distribution(
    x: ExactReal, fmt: lpfloat.FloatFormat, scheme: rounding.RoundScheme, v_sign: int = 0
) -> Dist:
    """Exact two-point distribution of fl(x) on a float grid."""
    v = to_fraction(x)
    lo, hi = lpfloat.neighbors(v, fmt)
    if lo == hi:
        return {lo: Fraction(1)}
    p_down = lpfloat.prob_round_down_fl(v, fmt, scheme, v_sign)
    if p_down == 1:
        return {lo: Fraction(1)}
    if p_down == 0:
        return {hi: Fraction(1)}
    return {lo: p_down, hi: 1 - p_down}


def difference_distribution(da: Dist, db: Dist) -> Dist:
    """Distribution of A - B for independent A ~ da, B ~ db."""
    out: Dist = {}
    for va, pa in da.items():
        for vb, pb in db.items():
            key = va - vb
            out[key] = out.get(key, Fraction(0)) + pa * pb
    return out


def dist_mean(d: Dist) -> Fraction:
    return sum((v * p for v, p in d.items()), Fraction(0))


def dist_moment(d: Dist, order: int) -> Fraction:
    return sum((v**order * p for v, p in d.items()), Fraction(0))


def dist_variance(d: Dist) -> Fraction:
    m = dist_mean(d)
    return dist_moment(d, 2) - m * m


# ---------------------------------------------------------------------------
# MC checks of single roundings
# ---------------------------------------------------------------------------


def mc_round_mean(
    x: ExactReal,
    fmt: QFormat,
    scheme: rounding.RoundScheme,
    n: int,
    seed: int,
    v_sign: int = 0,
) -> float:
    """Sample mean of n independent roundings of x."""
    v = to_fraction(x)
    gen = RandomStream(seed).generator(0, 0)
    nums = np.array([v.numerator] * n, dtype=object)
    m = rounding.round_ratio_vec(nums, v.denominator, fmt, scheme, gen, v_sign)
    return float(m.mean()) / fmt.scale


def check_expectation(
    x: ExactReal,
    fmt: QFormat,
    scheme: rounding.RoundScheme,
    n: int = 100_000,
    seed: int = 0,
    v_sign: int = 0,
    se_mult: float = 4.0,
) -> McEstimate:
    """Sample mean of round(x) against the exact expectation."""
    dist = fixed_round_distribution(x, fmt, scheme, v_sign)
    expected = dist_mean(dist)
    var = dist_variance(dist)
    mean = mc_round_mean(x, fmt, scheme, n, seed, v_sign)
    return McEstimate(
        mean=mean,
        se=math.sqrt(float(var) / n),
        n=n,
        expected=float(expected),
        se_mult=se_mult,
    )


# ---------------------------------------------------------------------------
# conditional second moment of the update when |t g~| < u
# ---------------------------------------------------------------------------


def second_moment_small_step(
    v: ExactReal, fmt: QFormat, scheme: rounding.RoundScheme, v_sign: int = 0
) -> Tuple[Fraction, Fraction]:
    """(exact E[d^2], formula value) for d = round(v) with |v| < u.

    The formula is u|v| for plain stochastic rounding and u|v| + u^2 c for
    the eps-biased variants, where c is eps while the perturbed probability
    stays interior and (u - |v|)/u once it clamps.  Exact zeros give 0.
    """
    val = to_fraction(v)
    u = fmt.u
    if abs(val) >= u:
        raise ValueError(f"|v| = {val} is not below the grid spacing {u}")
    dist = fixed_round_distribution(val, fmt, scheme, v_sign)
    exact = dist_moment(dist, 2)
    if val == 0:
        return exact, Fraction(0)
    if scheme.kind in ("rn",):
        raise ValueError("the small-step second-moment formula is stochastic-only")
    if scheme.kind == "sr" or scheme.eps is None:
        formula = u * abs(val)
    else:
        p_down = rounding.prob_round_down(val, fmt, scheme, v_sign)
        if 0 < p_down < 1:
            c = scheme.eps
        else:
            c = (u - abs(val)) / u
        formula = u * abs(val) + u * u * c
    return exact, formula


def check_small_step_second_moment(
    v: ExactReal,
    fmt: QFormat,
    scheme: rounding.RoundScheme,
    n: int = 100_000,
    seed: int = 0,
    v_sign: int = 0,
    se_mult: float = 4.0,
) -> Tuple[Fraction, Fraction, McEstimate]:
    """Exact vs formula vs MC for E[d^2] in the small-step regime."""
    exact, formula = second_moment_small_step(v, fmt, scheme, v_sign)
    val = to_fraction(v)
    gen = RandomStream(seed).generator(0, 0)
    nums = np.array([val.numerator] * n, dtype=object)
    m = rounding.round_ratio_vec(nums, val.denominator, fmt, scheme, gen, v_sign)
    d2 = (m.astype(np.float64) / fmt.scale) ** 2
    dist = fixed_round_distribution(val, fmt, scheme, v_sign)
    sq = {v_ * v_: Fraction(0) for v_ in dist}
    for v_, p in dist.items():
        sq[v_ * v_] += p
    var = dist_variance(sq)
    mc = McEstimate(
        mean=float(d2.mean()),
        se=math.sqrt(float(var) / n),
        n=n,
        expected=float(exact),
        se_mult=se_mult,
    )
    return exact, formula, mc


# ---------------------------------------------------------------------------
# gradient quantization bias and how it scales with u
# ---------------------------------------------------------------------------


def exact_grad(obj: Objective, x: Sequence[ExactReal]) -> Tuple[Fraction, ...]:
    """The recipe's gradient in exact rational arithmetic (no rounding)."""
    if obj.recipe is None:
        raise ValueError(f"objective {obj.name} has no recipe")
    be = FractionBackend()
    out = obj.recipe(be, [to_fraction(v) for v in x])
    return tuple(to_fraction(v) for v in out)


def input_corner_distribution(
    x: Sequence[ExactReal], fmt: QFormat, scheme: rounding.RoundScheme
) -> List[Tuple[Tuple[int, ...], Fraction]]:
    """Joint distribution of independently rounding each coordinate onto fmt."""
    per_coord = []
    for xi in x:
        d = fixed_round_distribution(xi, fmt, scheme)
        per_coord.append([(int(v * fmt.scale), p) for v, p in d.items()])
    corners = []
    for combo in itertools.product(*per_coord):
        ms = tuple(m for m, _ in combo)
        p = Fraction(1)
        for _, pc in combo:
            p *= pc
        corners.append((ms, p))
    return corners


def exact_rounded_grad_mean(
    obj: Objective,
    x: Sequence[ExactReal],
    fmt: QFormat,
    scheme: rounding.RoundScheme,
) -> Tuple[Fraction, ...]:
    """Exact E[g~] of the full pipeline: quantize x, then the rounded recipe.

    Both stages use the same scheme; the outer expectation enumerates the
    input corners, the inner one enumerates the recipe's rounding tree.
    """
    corners = input_corner_distribution(x, fmt, scheme)
    total: Optional[List[Fraction]] = None
    for ms, pc in corners:
        leaves = enumerate_recipe(lambda be: obj.recipe(be, list(ms)), fmt, scheme)
        mean_c = None
        for outputs, pl in leaves:
            scaled = [v * pl for v in outputs]
            mean_c = scaled if mean_c is None else [a + b for a, b in zip(mean_c, scaled)]
        contrib = [v * pc for v in mean_c]
        total = contrib if total is None else [a + b for a, b in zip(total, contrib)]
    return tuple(total)


def bias_scaling_curve(
    obj: Objective,
    x: Sequence[ExactReal],
    fmts: Sequence[QFormat],
    scheme: rounding.RoundScheme,
) -> List[Tuple[Fraction, Tuple[Fraction, ...]]]:
    """[(u, exact bias vector)] of the quantize-then-evaluate pipeline."""
    g_ref = exact_grad(obj, x)
    out = []
    for fmt in fmts:
        mean = exact_rounded_grad_mean(obj, x, fmt, scheme)
        bias = tuple(m - g for m, g in zip(mean, g_ref))
        out.append((fmt.u, bias))
    return out


def fit_log_slope(curve: Sequence[Tuple[Fraction, Tuple[Fraction, ...]]]) -> float:
    """Least-squares slope of log2 ||bias|| against log2 u."""
    xs, ys = [], []
    for u, bias in curve:
        norm = math.sqrt(sum(float(b) ** 2 for b in bias))
        if norm == 0:
            raise ValueError(f"bias vanished at u={u}; no slope to fit")
        xs.append(math.log2(float(u)))
        ys.append(math.log2(norm))
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


_QUANT_TAG_BASE = 500_000  # input quantization draws, clear of recipe tags


def mc_rounded_grad_mean(
    obj: Objective,
    x: Sequence[ExactReal],
    fmt: QFormat,
    scheme: rounding.RoundScheme,
    n: int = 10_000,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """(mean, se) per coordinate of the quantize-then-evaluate pipeline."""
    from .qnum import FixedVec

    stream = RandomStream(seed)
    xs = [to_fraction(v) for v in x]
    dim = len(xs)
    acc = np.zeros((n, dim))
    for rep in range(n):
        ms = []
        for i, v in enumerate(xs):
            fx = rounding.round(v, fmt, scheme, stream, rep, _QUANT_TAG_BASE + i)
            ms.append(fx.m)
        xq = FixedVec(np.array(ms, dtype=np.int64), fmt)
        g = obj.grad_rounded_fixed(xq, scheme, stream, rep)
        acc[rep] = g.to_floats()
    mean = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, se


# ---------------------------------------------------------------------------
# float update drift in the near-stagnation regime
# ---------------------------------------------------------------------------


def float_update_mean(
    x: ExactReal,
    step: ExactReal,
    fmt: lpfloat.FloatFormat,
    scheme: rounding.RoundScheme,
    v_sign: int = 0,
) -> Fraction:
    """Exact E[x - fl(x - step)]: the mean realized step of one float update."""
    xv = to_fraction(x)
    dist = float_round_distribution(xv - to_fraction(step), fmt, scheme, v_sign)
    return xv - dist_mean(dist)


@dataclass
class StagnationCheck:
    """One (gradient sign) branch of the float drift comparison."""

    scheme: rounding.RoundScheme
    step: Fraction        # t * g, the exact intended step
    exact_mean: Fraction  # E[d] from the two-point distribution
    formula: Fraction     # the closed form being verified
    mc: McEstimate

    @property
    def ok(self) -> bool:
        return self.exact_mean == self.formula and self.mc.ok


def check_float_drift(
    x: ExactReal,
    g: ExactReal,
    t: ExactReal,
    fmt: lpfloat.FloatFormat,
    scheme: rounding.RoundScheme,
    n: int = 20_000,
    seed: int = 0,
    se_mult: float = 4.0,
) -> StagnationCheck:
    """Verify the mean realized step of x <- fl(x - t g) on a float grid.

    Plain stochastic rounding must realize the intended step t g on
    average.  The signed eps variant (update direction -g) adds a drift of
    eps times the local grid gap, pushed in the descent direction:
    E[d] = t g + sign(g) eps gap, as long as the perturbed probability
    stays interior.
    """
    xv, gv, tv = to_fraction(x), to_fraction(g), to_fraction(t)
    step = tv * gv
    v_sign = 0
    if scheme.uses_given_sign:
        v_sign = -((gv > 0) - (gv < 0))
    exact = float_update_mean(xv, step, fmt, scheme, v_sign)

    lo, hi = lpfloat.neighbors(xv - step, fmt)
    gap = hi - lo
    if scheme.kind == "sr":
        formula = step
    elif scheme.kind == "signed_sr_eps":
        sgn = (gv > 0) - (gv < 0)
        formula = step + sgn * scheme.eps * gap
        p = lpfloat.prob_round_down_fl(xv - step, fmt, scheme, v_sign)
        if not 0 < p < 1:
            raise ValueError(
                "perturbed probability clamped; the interior drift formula "
                "does not apply at this (x, g, t, eps)"
            )
    else:
        raise ValueError(f"no drift formula for scheme {scheme}")

    dist = float_round_distribution(xv - step, fmt, scheme, v_sign)
    var = dist_variance(dist)
    stream = RandomStream(seed)
    total = 0.0
    for rep in range(n):
        r = lpfloat.fl_sub_round(xv, step, fmt, scheme, stream, rep, 0, v_sign)
        total += float(xv - r)
    mc = McEstimate(
        mean=total / n,
        se=math.sqrt(float(var) / n),
        n=n,
        expected=float(exact),
        se_mult=se_mult,
    )
    return StagnationCheck(
        scheme=scheme, step=step, exact_mean=exact, formula=formula, mc=mc
    )
