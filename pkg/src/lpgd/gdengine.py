"""Instrumented gradient descent under emulated low-precision arithmetic.

One iteration of the emulated update is

    x_{k+1} = x_k - d_k,     d_k = round2(t * g_k),   g_k = rounded gradient

and the engine books the error against the exact-arithmetic step through

    d_k = t grad f(x_k) + t sigma1_k + sigma2_k
    sigma1_k = g_k - grad f(x_k)          (gradient recipe rounding)
    sigma2_k = d_k - t g_k                (update product rounding)

with grad f evaluated in binary64 at the low-precision iterate.  Coordinates
are classed by whether the exact update step clears the update grid:
|t g_k,i| >= u puts i in C1, below is C2; all-C1 is case 1, all-C2 case 2,
mixed case 3.  In fixed mode u is the mul format's spacing; in float mode it
is the gap of the iterate's binade, coordinate by coordinate.

Number systems: "fixed" (two's-complement grids, working format for the
gradient recipe, mul format for the update product), "lowfloat" (a small
binary float grid for everything, every op rounds, the update subtraction
rounds once), and "reference" (plain binary64, no rounding, for baselines).

Draw addressing: gradient-recipe ops use tags 0.. in callsite order; the
update product uses tag SIGMA2_TAG (1 << 20, far above any recipe).  Two
runs with the same seed replay identically; per-coordinate draws sit at
fixed positions in each op's batch.

For signed_sr_eps the update rounding is steered toward descent: in fixed
mode that is the sign of t*g (same as sr_eps there); in float mode the
rounded value is x - t*g, so the favored direction is -sign(g).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator, List, Optional, Sequence

import numpy as np

from . import lpfloat, rng, rounding
from .objectives import Objective, eval_grad_reference
from .qnum import FixedVec, QFormat, from_exact, make_format, parse_rational, to_fraction

SIGMA2_TAG = 1 << 20

NUMBER_SYSTEMS = ("fixed", "lowfloat", "reference")


@dataclass
class GDConfig:
    """Everything one emulated descent run needs."""

    objective: Objective
    t: Fraction
    x0: Sequence
    iterations: int
    seed: int = 0
    number_system: str = "fixed"
    working_fmt: Optional[QFormat] = None
    mul_fmt: Optional[QFormat] = None
    float_fmt: Optional[lpfloat.FloatFormat] = None
    sigma1_scheme: rounding.RoundScheme = field(
        default_factory=lambda: rounding.RoundScheme("rn")
    )
    sigma2_scheme: rounding.RoundScheme = field(
        default_factory=lambda: rounding.RoundScheme("rn")
    )
    stop_on_stagnation: bool = False
    stop_below_f: Optional[float] = None
    stagnation_window: int = 50

    def __post_init__(self) -> None:
        self.t = parse_rational(self.t)
        if self.t <= 0:
            raise ValueError(f"step size must be positive, got {self.t}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.number_system not in NUMBER_SYSTEMS:
            raise ValueError(f"unknown number system {self.number_system!r}")
        self.sigma1_scheme = rounding.parse_scheme(self.sigma1_scheme)
        self.sigma2_scheme = rounding.parse_scheme(self.sigma2_scheme)
        if self.working_fmt is not None and not isinstance(self.working_fmt, QFormat):
            self.working_fmt = make_format(self.working_fmt)
        if self.mul_fmt is not None and not isinstance(self.mul_fmt, QFormat):
            self.mul_fmt = make_format(self.mul_fmt)
        if self.float_fmt is not None and not isinstance(
            self.float_fmt, lpfloat.FloatFormat
        ):
            self.float_fmt = lpfloat.parse_float_format(self.float_fmt)
        if len(self.x0) != self.objective.n:
            raise ValueError(
                f"x0 has {len(self.x0)} coordinates, objective wants {self.objective.n}"
            )
        if self.number_system == "fixed":
            if self.working_fmt is None:
                raise ValueError("fixed mode needs working_fmt")
            if self.mul_fmt is None:
                self.mul_fmt = self.working_fmt
            if self.mul_fmt.qf > self.working_fmt.qf:
                raise ValueError(
                    f"update grid {self.mul_fmt} is finer than working grid "
                    f"{self.working_fmt}; the iterate update could not stay exact"
                )
        elif self.number_system == "lowfloat":
            if self.float_fmt is None:
                raise ValueError("lowfloat mode needs float_fmt")

    @property
    def u_mul(self) -> Fraction:
        """Spacing of the update grid (fixed mode)."""
        if self.mul_fmt is None:
            raise ValueError("u_mul is only defined in fixed mode")
        return self.mul_fmt.u

    def initial_state(self):
        exact = [parse_rational(v) for v in self.x0]
        if self.number_system == "fixed":
            return FixedVec(
                np.array(
                    [from_exact(v, self.working_fmt).m for v in exact],
                    dtype=np.int64,
                ),
                self.working_fmt,
            )
        if self.number_system == "lowfloat":
            for v in exact:
                if not lpfloat.is_representable(v, self.float_fmt):
                    raise ValueError(f"x0 entry {v} is not on the {self.float_fmt} grid")
            return exact
        return np.asarray([float(v) for v in exact], dtype=np.float64)


@dataclass
class IterationTrace:
    """One iteration's bookkeeping, unpacked from a RunResult."""

    k: int
    f: float
    x: np.ndarray
    g_exact: np.ndarray
    g_tilde: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    d: np.ndarray
    case: int
    c2_idx: np.ndarray
    nonopposite_violations: int
    d_zero: bool


@dataclass
class RunResult:
    """Full record of one run: trajectory, per-step errors, case labels."""

    config: GDConfig
    fs: np.ndarray
    xs: np.ndarray
    g_exact: np.ndarray
    g_tilde: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    d: np.ndarray
    case: np.ndarray
    c2_mask: np.ndarray
    nonopp_violations: np.ndarray  # per-iteration count of sign flips
    x_m: Optional[np.ndarray] = None
    g_tilde_m: Optional[np.ndarray] = None
    d_m: Optional[np.ndarray] = None
    final_state: object = None
    stagnated: bool = False
    stagnation_iter: int = -1
    steps: int = 0

    @property
    def final_f(self) -> float:
        return float(self.fs[self.steps])

    @property
    def final_x(self) -> np.ndarray:
        return self.xs[self.steps]

    @property
    def c2_count(self) -> np.ndarray:
        return self.c2_mask.sum(axis=1)

    def trace(self, k: int) -> IterationTrace:
        return IterationTrace(
            k=k,
            f=float(self.fs[k]),
            x=self.xs[k],
            g_exact=self.g_exact[k],
            g_tilde=self.g_tilde[k],
            sigma1=self.sigma1[k],
            sigma2=self.sigma2[k],
            d=self.d[k],
            case=int(self.case[k]),
            c2_idx=np.flatnonzero(self.c2_mask[k]),
            nonopposite_violations=int(self.nonopp_violations[k]),
            d_zero=bool((self.d[k] == 0).all()),
        )

    def traces(self) -> Iterator[IterationTrace]:
        for k in range(self.steps):
            yield self.trace(k)

    def iterations_below(self, threshold: float) -> Optional[int]:
        """First k with f(x_k) <= threshold, or None."""
        hits = np.flatnonzero(self.fs[: self.steps + 1] <= threshold)
        return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# case classification and step pieces
# ---------------------------------------------------------------------------


def classify_case(g_tilde, t: Fraction, u) -> tuple:
    """(case, c2_mask): coordinate i is C2 when |t * g_i| < u_i.

    g_tilde: FixedVec (exact integer compare) or a sequence of exact values;
    u: scalar grid spacing or per-coordinate spacings.
    """
    if isinstance(g_tilde, FixedVec):
        gv = g_tilde.to_fractions()
    else:
        gv = [to_fraction(v) for v in g_tilde]
    us = list(u) if np.ndim(u) else [to_fraction(u)] * len(gv)
    mask = np.array(
        [abs(t * g) < to_fraction(ui) for g, ui in zip(gv, us)], dtype=bool
    )
    if not mask.any():
        case = 1
    elif mask.all():
        case = 2
    else:
        case = 3
    return case, mask


def check_nonopposite(g_tilde: np.ndarray, g_exact: np.ndarray) -> int:
    """Count coordinates where the rounded gradient flips the exact sign."""
    return int((np.sign(g_tilde) * np.sign(g_exact) < 0).sum())


def eval_grad_rounded(
    obj: Objective, x_state, cfg: GDConfig, stream: Optional[rng.RandomStream], k: int
):
    """The rounded gradient at the iterate, per the configured number system."""
    if cfg.number_system == "fixed":
        return obj.grad_rounded_fixed(x_state, cfg.sigma1_scheme, stream, k)
    if cfg.number_system == "lowfloat":
        return obj.grad_rounded_float(
            x_state, cfg.float_fmt, cfg.sigma1_scheme, stream, k
        )
    return eval_grad_reference(obj, x_state)


def _float_gaps(x_state, fmt: lpfloat.FloatFormat) -> List[Fraction]:
    return [lpfloat.binade_gap(v, fmt) for v in x_state]


def gd_step(x_state, cfg: GDConfig, stream: Optional[rng.RandomStream], k: int):
    """One update.  Returns (new_state, step dict)."""
    obj = cfg.objective
    t = cfg.t
    tn, td = t.numerator, t.denominator

    if cfg.number_system == "fixed":
        x: FixedVec = x_state
        g_t = eval_grad_rounded(obj, x, cfg, stream, k)
        x_f = x.to_floats()
        g_ref = eval_grad_reference(obj, x_f)
        case, c2 = classify_case(g_t, t, cfg.u_mul)

        s_w = x.fmt.scale
        s_m = cfg.mul_fmt.scale
        gen = (
            stream.generator(k, SIGMA2_TAG) if cfg.sigma2_scheme.is_random else None
        )
        v_sign = np.sign(g_t.m) if cfg.sigma2_scheme.uses_given_sign else 0
        peak = int(np.abs(g_t.m).max(initial=0)) * tn
        num = (
            g_t.m * tn
            if peak * s_m < 1 << 62
            else np.array([int(m) * tn for m in g_t.m], dtype=object)
        )
        d_m = rounding.round_ratio_vec(
            num, td * s_w, cfg.mul_fmt, cfg.sigma2_scheme, gen, v_sign
        )
        shift = x.fmt.qf - cfg.mul_fmt.qf
        new_x = FixedVec(x.m - (d_m << shift), x.fmt)

        g_t_f = g_t.to_floats()
        d_f = d_m / s_m
        return new_x, {
            "g_tilde": g_t_f,
            "g_tilde_m": g_t.m,
            "g_exact": g_ref,
            "d": d_f,
            "d_m": d_m,
            "sigma1": g_t_f - g_ref,
            "sigma2": d_f - float(t) * g_t_f,
            "case": case,
            "c2": c2,
            "nonopp": check_nonopposite(g_t_f, g_ref),
        }

    if cfg.number_system == "lowfloat":
        x = list(x_state)
        g_t = eval_grad_rounded(obj, x, cfg, stream, k)
        x_f = np.array([float(v) for v in x])
        g_ref = eval_grad_reference(obj, x_f)
        gaps = _float_gaps(x, cfg.float_fmt)
        case, c2 = classify_case(g_t, t, gaps)

        new_x, d_vals, s2_vals = [], [], []
        for i, (xi, gi) in enumerate(zip(x, g_t)):
            v_sign = -_fraction_sign(gi) if cfg.sigma2_scheme.uses_given_sign else 0
            nxt = lpfloat.fl_sub_round(
                xi,
                t * gi,
                cfg.float_fmt,
                cfg.sigma2_scheme,
                stream,
                k,
                SIGMA2_TAG + i,
                v_sign,
            )
            new_x.append(nxt)
            d_vals.append(xi - nxt)
            s2_vals.append((xi - nxt) - t * gi)
        g_t_f = np.array([float(v) for v in g_t])
        return new_x, {
            "g_tilde": g_t_f,
            "g_tilde_m": None,
            "g_exact": g_ref,
            "d": np.array([float(v) for v in d_vals]),
            "d_m": None,
            "sigma1": g_t_f - g_ref,
            "sigma2": np.array([float(v) for v in s2_vals]),
            "case": case,
            "c2": c2,
            "nonopp": check_nonopposite(g_t_f, g_ref),
        }

    # reference mode: exact binary64 descent
    x = np.asarray(x_state, dtype=np.float64)
    g_ref = eval_grad_reference(obj, x)
    d = float(t) * g_ref
    new_x = x - d
    n = x.size
    return new_x, {
        "g_tilde": g_ref.copy(),
        "g_tilde_m": None,
        "g_exact": g_ref,
        "d": d,
        "d_m": None,
        "sigma1": np.zeros(n),
        "sigma2": np.zeros(n),
        "case": 0,
        "c2": np.zeros(n, dtype=bool),
        "nonopp": 0,
    }


def _fraction_sign(v) -> int:
    return (v > 0) - (v < 0)


def _state_floats(state, number_system: str) -> np.ndarray:
    if number_system == "fixed":
        return state.to_floats()
    if number_system == "lowfloat":
        return np.array([float(v) for v in state])
    return np.asarray(state, dtype=np.float64)


def run(cfg: GDConfig) -> RunResult:
    """Run the configured descent and record every iteration."""
    obj = cfg.objective
    n = obj.n
    kmax = cfg.iterations
    stream = rng.RandomStream(cfg.seed)

    state = cfg.initial_state()
    fixed = cfg.number_system == "fixed"

    fs = np.zeros(kmax + 1)
    xs = np.zeros((kmax + 1, n))
    g_exact = np.zeros((kmax, n))
    g_tilde = np.zeros((kmax, n))
    sigma1 = np.zeros((kmax, n))
    sigma2 = np.zeros((kmax, n))
    d = np.zeros((kmax, n))
    case = np.zeros(kmax, dtype=np.uint8)
    c2_mask = np.zeros((kmax, n), dtype=bool)
    nonopp = np.zeros(kmax, dtype=np.int64)
    x_m = np.zeros((kmax + 1, n), dtype=np.int64) if fixed else None
    g_tilde_m = np.zeros((kmax, n), dtype=np.int64) if fixed else None
    d_m = np.zeros((kmax, n), dtype=np.int64) if fixed else None

    xs[0] = _state_floats(state, cfg.number_system)
    fs[0] = obj.f(xs[0])
    if fixed:
        x_m[0] = state.m

    stagnated = False
    stagnation_iter = -1
    zero_streak = 0
    steps = 0

    if cfg.number_system == "fixed":
        u_stag = float(cfg.u_mul)
    elif cfg.number_system == "lowfloat":
        u_stag = float(cfg.float_fmt.unit_roundoff)
    else:
        u_stag = 0.0

    for k in range(kmax):
        if cfg.stop_below_f is not None and fs[k] <= cfg.stop_below_f:
            break
        state, rec = gd_step(state, cfg, stream, k)
        g_exact[k] = rec["g_exact"]
        g_tilde[k] = rec["g_tilde"]
        sigma1[k] = rec["sigma1"]
        sigma2[k] = rec["sigma2"]
        d[k] = rec["d"]
        case[k] = rec["case"]
        c2_mask[k] = rec["c2"]
        nonopp[k] = rec["nonopp"]
        if fixed:
            g_tilde_m[k] = rec["g_tilde_m"]
            d_m[k] = rec["d_m"]
            x_m[k + 1] = state.m
        xs[k + 1] = _state_floats(state, cfg.number_system)
        fs[k + 1] = obj.f(xs[k + 1])
        steps = k + 1

        if (rec["d"] == 0).all():
            zero_streak += 1
            if (
                zero_streak >= cfg.stagnation_window
                and not stagnated
                and np.linalg.norm(rec["g_exact"]) > 10.0 * np.sqrt(n) * u_stag
            ):
                stagnated = True
                stagnation_iter = k - cfg.stagnation_window + 1
                if cfg.stop_on_stagnation:
                    break
        else:
            zero_streak = 0

    sl = steps
    return RunResult(
        config=cfg,
        fs=fs[: sl + 1],
        xs=xs[: sl + 1],
        g_exact=g_exact[:sl],
        g_tilde=g_tilde[:sl],
        sigma1=sigma1[:sl],
        sigma2=sigma2[:sl],
        d=d[:sl],
        case=case[:sl],
        c2_mask=c2_mask[:sl],
        nonopp_violations=nonopp[:sl],
        x_m=x_m[: sl + 1] if fixed else None,
        g_tilde_m=g_tilde_m[:sl] if fixed else None,
        d_m=d_m[:sl] if fixed else None,
        final_state=state,
        stagnated=stagnated,
        stagnation_iter=stagnation_iter,
        steps=sl,
    )


def run_ensemble(cfg: GDConfig, seeds: Sequence[int]) -> List[RunResult]:
    """Independent runs of the same config over the given seeds."""
    return [run(replace(cfg, seed=int(s))) for s in seeds]
