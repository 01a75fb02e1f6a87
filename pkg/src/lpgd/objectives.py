"""Test objectives and their low-precision gradient recipes.

Each objective provides the exact binary64 value/gradient plus a *recipe*: a
fixed sequence of elementary ops (add/sub/mul/constant-coefficient) that
computes the gradient in emulated arithmetic.  Recipes are written once
against a small ops backend and evaluated four ways:

    FixedBackend    integer mantissas, products round once into the format
    FloatBackend    grid Fractions, every op result rounds (float semantics)
    DoubleBackend   plain binary64, nothing rounds (reference/testing)
    EnumBackend     exhaustive: every rounding branches, exact probabilities

Constant coefficients (2, 400, 1/16, 1e-3 = 1/1000, ...) are exact rationals
applied as ratios; the product rounds once.  Integer coefficients in fixed
point land back on the grid and never round.

Op tag discipline: every op callsite advances the backend's tag counter in
every backend, whether or not that op rounds, so a draw's (iteration, tag)
address depends only on the recipe structure, never on the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import expit

from . import lpfloat, rng, rounding
from .qnum import FixedVec, QFormat, from_exact, to_fraction

# ---------------------------------------------------------------------------
# ops backends
# ---------------------------------------------------------------------------


class FixedBackend:
    """Recipe ops on integer mantissas in one fixed-point format.

    add/sub and integer coefficients are exact (hard OverflowError past the
    format range); products and fractional coefficients round once with the
    given scheme.
    """

    def __init__(
        self,
        fmt: QFormat,
        scheme: rounding.RoundScheme,
        stream: Optional[rng.RandomStream] = None,
        k: int = 0,
        tag_base: int = 0,
    ):
        self.fmt = fmt
        self.scheme = scheme
        self.stream = stream
        self.k = k
        self.tag = tag_base

    def _next_gen(self):
        tag = self.tag
        self.tag += 1
        if self.scheme.is_random:
            if self.stream is None:
                raise ValueError("stochastic scheme needs a RandomStream")
            return self.stream.generator(self.k, tag)
        return None

    def _round_ratio(self, num: int, den: int) -> int:
        gen = self._next_gen()
        arr = (
            np.array([num], dtype=np.int64)
            if abs(num) < (1 << 62) // self.fmt.scale and den < (1 << 62)
            else np.array([num], dtype=object)
        )
        return int(rounding.round_ratio_vec(arr, den, self.fmt, self.scheme, gen)[0])

    def const(self, c) -> int:
        """A stored constant; must sit on the grid exactly."""
        return from_exact(c, self.fmt).m

    def add(self, a: int, b: int) -> int:
        self.tag += 1
        return self.fmt.check_mantissa(a + b)

    def sub(self, a: int, b: int) -> int:
        self.tag += 1
        return self.fmt.check_mantissa(a - b)

    def mul(self, a: int, b: int) -> int:
        # (a/S)(b/S) exactly at S^2 scale, then one rounding back to the S grid
        return self._round_ratio(a * b, self.fmt.scale * self.fmt.scale)

    def coef(self, c, a: int) -> int:
        """c * a for an exact rational coefficient c; rounds once if off-grid."""
        cf = to_fraction(c)
        if cf.denominator == 1:
            self.tag += 1
            return self.fmt.check_mantissa(int(cf) * a)
        return self._round_ratio(cf.numerator * a, cf.denominator * self.fmt.scale)

    def to_value(self, a: int) -> Fraction:
        return Fraction(a, self.fmt.scale)


class FloatBackend:
    """Recipe ops on a low-precision float grid; every result rounds."""

    def __init__(
        self,
        fmt: lpfloat.FloatFormat,
        scheme: rounding.RoundScheme,
        stream: Optional[rng.RandomStream] = None,
        k: int = 0,
        tag_base: int = 0,
    ):
        self.fmt = fmt
        self.scheme = scheme
        self.stream = stream
        self.k = k
        self.tag = tag_base

    def _round(self, x: Fraction) -> Fraction:
        tag = self.tag
        self.tag += 1
        return lpfloat.fl_round(x, self.fmt, self.scheme, self.stream, self.k, tag)

    def const(self, c) -> Fraction:
        # constants quantize deterministically, nearest-even, once per use
        return lpfloat.fl_round(to_fraction(c), self.fmt, rounding.RoundScheme("rn"))

    def add(self, a, b) -> Fraction:
        return self._round(a + b)

    def sub(self, a, b) -> Fraction:
        return self._round(a - b)

    def mul(self, a, b) -> Fraction:
        return self._round(a * b)

    def coef(self, c, a) -> Fraction:
        return self._round(to_fraction(c) * a)

    def to_value(self, a: Fraction) -> Fraction:
        return a


class DoubleBackend:
    """Plain binary64 evaluation of a recipe (nothing rounds)."""

    def __init__(self):
        self.tag = 0

    def const(self, c) -> float:
        return float(c)

    def add(self, a, b) -> float:
        self.tag += 1
        return a + b

    def sub(self, a, b) -> float:
        self.tag += 1
        return a - b

    def mul(self, a, b) -> float:
        self.tag += 1
        return a * b

    def coef(self, c, a) -> float:
        self.tag += 1
        return float(c) * a

    def to_value(self, a: float) -> float:
        return a


class FractionBackend:
    """Exact rational evaluation of a recipe (nothing rounds, nothing clips)."""

    def __init__(self):
        self.tag = 0

    def const(self, c) -> Fraction:
        return to_fraction(c)

    def add(self, a, b) -> Fraction:
        self.tag += 1
        return a + b

    def sub(self, a, b) -> Fraction:
        self.tag += 1
        return a - b

    def mul(self, a, b) -> Fraction:
        self.tag += 1
        return a * b

    def coef(self, c, a) -> Fraction:
        self.tag += 1
        return to_fraction(c) * a

    def to_value(self, a: Fraction) -> Fraction:
        return a


class _ImpossiblePath(Exception):
    """Raised when an enumeration plan forces a probability-zero branch."""


class EnumBackend:
    """Exhaustive fixed-point evaluation: each rounding is a binary branch.

    Driven by `enumerate_recipe`: a plan is a list of up/down choices for the
    rounding ops in callsite order; the backend multiplies up the exact
    probability of the chosen branches.
    """

    def __init__(self, fmt: QFormat, scheme: rounding.RoundScheme, plan: Sequence[int]):
        self.fmt = fmt
        self.scheme = scheme
        self.plan = list(plan)
        self.used = 0
        self.prob = Fraction(1)
        self.tag = 0

    def _branch(self, value: Fraction) -> int:
        """Round `value`; consume one plan slot if it is off-grid."""
        scale = self.fmt.scale
        pos = value * scale
        q = pos.numerator // pos.denominator
        if pos == q:
            self.tag += 1
            return self.fmt.check_mantissa(q)
        p_down = rounding.prob_round_down(value, self.fmt, self.scheme)
        choice = self.plan[self.used] if self.used < len(self.plan) else 0
        self.used += 1
        self.tag += 1
        p = p_down if choice == 0 else 1 - p_down
        if p == 0:
            raise _ImpossiblePath
        self.prob *= p
        return self.fmt.check_mantissa(q + choice)

    def const(self, c) -> int:
        return from_exact(c, self.fmt).m

    def add(self, a, b) -> int:
        self.tag += 1
        return self.fmt.check_mantissa(a + b)

    def sub(self, a, b) -> int:
        self.tag += 1
        return self.fmt.check_mantissa(a - b)

    def mul(self, a, b) -> int:
        return self._branch(Fraction(a * b, self.fmt.scale * self.fmt.scale))

    def coef(self, c, a) -> int:
        cf = to_fraction(c)
        if cf.denominator == 1:
            self.tag += 1
            return self.fmt.check_mantissa(int(cf) * a)
        return self._branch(Fraction(cf.numerator * a, cf.denominator * self.fmt.scale))

    def to_value(self, a: int) -> Fraction:
        return Fraction(a, self.fmt.scale)


def enumerate_recipe(
    recipe: Callable[[EnumBackend], Sequence[int]],
    fmt: QFormat,
    scheme: rounding.RoundScheme,
) -> List[tuple]:
    """All (outputs, probability) leaves of a recipe's rounding tree, exactly.

    `recipe` takes an EnumBackend and returns output mantissas.  The result
    probabilities sum to 1; outputs come back as tuples of Fractions.
    """
    leaves: List[tuple] = []

    def walk(plan: List[int]) -> None:
        be = EnumBackend(fmt, scheme, plan)
        try:
            out = recipe(be)
        except _ImpossiblePath:
            return
        if be.used == len(plan):
            values = tuple(Fraction(int(m), fmt.scale) for m in out)
            leaves.append((values, be.prob))
            return
        walk(plan + [0])
        walk(plan + [1])

    walk([])
    total = sum(p for _, p in leaves)
    assert total == 1, f"branch probabilities sum to {total}, not 1"
    return leaves


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


@dataclass
class Objective:
    """An optimization target plus (optionally) its low-precision recipe."""

    name: str
    n: int
    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    x_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    lip_grad: Optional[float] = None
    pl_mu: Optional[float] = None
    recipe: Optional[Callable] = None  # recipe(backend, xs) -> output values
    minima: Optional[List[np.ndarray]] = None
    vector_fixed_grad: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def grad_rounded_fixed(
        self,
        x: FixedVec,
        scheme: rounding.RoundScheme,
        stream: Optional[rng.RandomStream],
        k: int,
        tag_base: int = 0,
    ) -> FixedVec:
        """Gradient recipe on the fixed-point grid of x."""
        if self.vector_fixed_grad is not None:
            return self.vector_fixed_grad(x, scheme, stream, k, tag_base)
        if self.recipe is None:
            raise NotImplementedError(f"{self.name} has no low-precision recipe")
        be = FixedBackend(x.fmt, scheme, stream, k, tag_base)
        out = self.recipe(be, [int(m) for m in x.m])
        return FixedVec(np.array(out, dtype=np.int64), x.fmt)

    def grad_rounded_float(
        self,
        x: List[Fraction],
        fmt: lpfloat.FloatFormat,
        scheme: rounding.RoundScheme,
        stream: Optional[rng.RandomStream],
        k: int,
        tag_base: int = 0,
    ) -> List[Fraction]:
        """Gradient recipe on a low-precision float grid."""
        if self.recipe is None:
            raise NotImplementedError(f"{self.name} has no scalar recipe")
        be = FloatBackend(fmt, scheme, stream, k, tag_base)
        return list(self.recipe(be, list(x)))


def eval_grad_reference(obj: Objective, x) -> np.ndarray:
    """Exact-arithmetic (binary64) gradient at x."""
    return np.asarray(obj.grad(np.asarray(x, dtype=np.float64)), dtype=np.float64)


# -- quadratic --------------------------------------------------------------


def quadratic(a_diag, x_star=None) -> Objective:
    """f(x) = 0.5 (x - x*)' A (x - x*) with diagonal A > 0.

    Entries of a_diag and x_star may be Fractions (or decimal strings); the
    recipe uses them exactly, the binary64 f/grad use their float images.
    """
    a_fr = [Fraction(v) if isinstance(v, str) else to_fraction(v) for v in a_diag]
    if any(v <= 0 for v in a_fr):
        raise ValueError("diagonal entries must be positive")
    n = len(a_fr)
    if x_star is None:
        xs_fr = [Fraction(0)] * n
    else:
        xs_fr = [Fraction(v) if isinstance(v, str) else to_fraction(v) for v in x_star]
    a = np.array([float(v) for v in a_fr])
    xs = np.array([float(v) for v in xs_fr])

    def f(x: np.ndarray) -> float:
        d = np.asarray(x, dtype=np.float64) - xs
        return float(0.5 * np.dot(a * d, d))

    def grad(x: np.ndarray) -> np.ndarray:
        return a * (np.asarray(x, dtype=np.float64) - xs)

    def recipe(be, xv):
        out = []
        for i in range(n):
            d = be.sub(xv[i], be.const(xs_fr[i]))
            out.append(be.coef(a_fr[i], d))
        return out

    return Objective(
        name="quadratic",
        n=n,
        f=f,
        grad=grad,
        x_star=xs,
        f_star=0.0,
        lip_grad=float(a.max()),
        pl_mu=float(a.min()),
        recipe=recipe,
        minima=[xs],
        params={"a_diag": a.tolist(), "x_star": xs.tolist()},
    )


# -- rosenbrock -------------------------------------------------------------


def rosenbrock() -> Objective:
    """f(x) = (1 - x1)^2 + 100 (x2 - x1^2)^2, minimum at (1, 1)."""

    def f(x: np.ndarray) -> float:
        x1, x2 = float(x[0]), float(x[1])
        return (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2

    def grad(x: np.ndarray) -> np.ndarray:
        x1, x2 = float(x[0]), float(x[1])
        v = x2 - x1 * x1
        return np.array([-2.0 * (1.0 - x1) - 400.0 * x1 * v, 200.0 * v])

    def recipe(be, xv):
        x1, x2 = xv
        s = be.mul(x1, x1)                       # x1^2
        v = be.sub(x2, s)                        # x2 - x1^2
        w = be.mul(x1, v)                        # x1 (x2 - x1^2)
        t1 = be.coef(2, be.sub(x1, be.const(1)))  # 2 (x1 - 1)
        g1 = be.sub(t1, be.coef(400, w))
        g2 = be.coef(200, v)
        return [g1, g2]

    return Objective(
        name="rosenbrock",
        n=2,
        f=f,
        grad=grad,
        x_star=np.array([1.0, 1.0]),
        f_star=0.0,
        recipe=recipe,
        minima=[np.array([1.0, 1.0])],
    )


# -- himmelblau ---------------------------------------------------------------


HIMMELBLAU_MINIMA = [
    np.array([3.0, 2.0]),
    np.array([-2.805118086952745, 3.131312518250573]),
    np.array([-3.779310253377747, -3.283185991286170]),
    np.array([3.584428340330492, -1.848126526964404]),
]


def himmelblau() -> Objective:
    """f(x) = (x1^2 + x2 - 11)^2 + (x1 + x2^2 - 7)^2, four global minima."""

    def f(x: np.ndarray) -> float:
        x1, x2 = float(x[0]), float(x[1])
        return (x1 * x1 + x2 - 11.0) ** 2 + (x1 + x2 * x2 - 7.0) ** 2

    def grad(x: np.ndarray) -> np.ndarray:
        x1, x2 = float(x[0]), float(x[1])
        b = x1 * x1 + x2 - 11.0
        e = x1 + x2 * x2 - 7.0
        return np.array([4.0 * x1 * b + 2.0 * e, 2.0 * b + 4.0 * x2 * e])

    def recipe(be, xv):
        x1, x2 = xv
        a = be.mul(x1, x1)                       # x1^2
        b = be.sub(be.add(a, x2), be.const(11))  # x1^2 + x2 - 11
        c = be.mul(x2, x2)                       # x2^2
        e = be.sub(be.add(x1, c), be.const(7))   # x1 + x2^2 - 7
        p = be.mul(x1, b)
        q = be.mul(x2, e)
        g1 = be.add(be.coef(4, p), be.coef(2, e))
        g2 = be.add(be.coef(2, b), be.coef(4, q))
        return [g1, g2]

    return Objective(
        name="himmelblau",
        n=2,
        f=f,
        grad=grad,
        x_star=HIMMELBLAU_MINIMA[0],
        f_star=0.0,
        recipe=recipe,
        minima=list(HIMMELBLAU_MINIMA),
    )


# -- binary logistic regression ----------------------------------------------


def blr(
    x_data: np.ndarray,
    y: np.ndarray,
    data_fmt: Optional[QFormat] = None,
    reg: float = 0.0,
) -> Objective:
    """Mean logistic loss over (x_data, y in {0,1}), optional L2 term.

    When data_fmt is given the features are quantized onto that grid once
    (nearest-even) and BOTH the recipe and the reference gradient see the
    quantized data, so the gradient error measures recipe rounding only.
    The low-precision path is vectorized over samples and requires the
    iterate to live in data_fmt.
    """
    x_raw = np.asarray(x_data, dtype=np.float64)
    y = np.asarray(y)
    n_samples, n_features = x_raw.shape
    if y.shape != (n_samples,) or not np.isin(y, (0, 1)).all():
        raise ValueError("y must be 0/1 with one label per sample")

    if data_fmt is not None:
        # nearest-even quantization, exact via the double-rounding kernel
        xm = rounding.round_doubles_vec(
            x_raw.reshape(-1), data_fmt, rounding.RoundScheme("rn")
        ).reshape(n_samples, n_features)
        x_q = xm / data_fmt.scale
    else:
        xm = None
        x_q = x_raw

    yv = y.astype(np.float64)
    lam = float(reg)

    def f(w: np.ndarray) -> float:
        z = x_q @ np.asarray(w, dtype=np.float64)
        # log(1 + e^z) - y z, stable via logaddexp
        loss = np.logaddexp(0.0, z) - yv * z
        return float(loss.mean() + 0.5 * lam * np.dot(w, w))

    def grad(w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        z = x_q @ w
        r = expit(z) - yv
        return x_q.T @ r / n_samples + lam * w

    def vector_fixed_grad(x: FixedVec, scheme, stream, k, tag_base=0):
        fmt = x.fmt
        if data_fmt is None or fmt != data_fmt:
            raise ValueError("blr fixed path needs the iterate in the data format")
        scale = fmt.scale

        def gen(t):
            return stream.generator(k, tag_base + t) if scheme.is_random else None

        peak = int(np.abs(xm).max(initial=0)) * int(np.abs(x.m).max(initial=0))
        if peak * scale >= 1 << 62:
            raise OverflowError("blr mantissa products exceed the int64 fast path")

        # products x_ij * w_j, each rounded once, then exact row sums
        prods = rounding.round_ratio_vec(
            (xm * x.m[None, :]).reshape(-1), scale * scale, fmt, scheme, gen(0)
        ).reshape(n_samples, n_features)
        zm = FixedVec(prods.sum(axis=1, dtype=np.int64), fmt).m

        # logistic values in binary64, then one rounding each
        sm = rounding.round_doubles_vec(expit(zm / scale), fmt, scheme, gen(1))

        rm = sm - (y * scale).astype(np.int64)  # exact: y is on every grid

        # products r_i * x_ij, rounded once
        qm = rounding.round_ratio_vec(
            (rm[:, None] * xm).reshape(-1), scale * scale, fmt, scheme, gen(2)
        ).reshape(n_samples, n_features)

        # mean over samples: exact column sums, one rounding of /N
        col = qm.sum(axis=0, dtype=np.int64)
        gm = rounding.round_ratio_vec(col, n_samples * scale, fmt, scheme, gen(3))

        if lam:
            lam_fr = to_fraction(lam)
            reg_m = rounding.round_ratio_vec(
                x.m * lam_fr.numerator, lam_fr.denominator, fmt, scheme, gen(4)
            )
            gm = gm + reg_m
        return FixedVec(gm, fmt)

    hess_bound = float(np.linalg.eigvalsh(x_q.T @ x_q).max() / (4.0 * n_samples) + lam)

    return Objective(
        name="blr",
        n=n_features,
        f=f,
        grad=grad,
        lip_grad=hess_bound,
        vector_fixed_grad=vector_fixed_grad,
        params={"n_samples": n_samples, "n_features": n_features, "reg": lam},
    )


_FACTORIES = {
    "quadratic": quadratic,
    "rosenbrock": rosenbrock,
    "himmelblau": himmelblau,
    "blr": blr,
}


def make_objective(name: str, **kwargs) -> Objective:
    """Factory by name: quadratic / rosenbrock / himmelblau / blr."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown objective {name!r}") from None
    return factory(**kwargs)
