"""Instance families and independent brute-force oracles.

* ``make_lqr``: separable quadratic costs with identity dynamics and a known
  scalar Riccati recursion per axis.
* ``make_hard_instance``: the stochastic inventory DP whose first decision is
  a newsvendor quantile of a sum of two-point demands; ``newsvendor_oracle``
  and ``cdf_convolution_oracle`` compute that quantile exactly.
* ``make_lower_bound_instance``: the purely discrete instance with
  J_0(x) = |x_k - alpha_k|.
* ``make_pwl_instance``: piecewise-linear costs with kinked value functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .costs import MaxAbsCost, PiecewiseLinearCost, QuadraticCost, zero_cost
from .dp_det import FixedDuals
from .errors import BadParams, BudgetExceeded
from .grid import MixedSpace, RegularGrid
from .model import DpModel, NoiseModel

ORACLE_MAX_N = 24


# ---------------------------------------------------------------- LQR


def _per_axis(v, d: int) -> np.ndarray:
    return np.broadcast_to(np.atleast_1d(np.asarray(v, dtype=float)), (d,)).copy()


def make_lqr(
    d: int = 1,
    T: int = 3,
    curvature=(0.0, 1.0, 1.0),
    bound: float = 1.0,
    points: int = 65,
    action_bound: Optional[float] = None,
    action_points: int = 129,
) -> DpModel:
    """x' = x + u with g_x = sum c_x x_i^2, g_u = sum c_u u_i^2, g_T = sum c_T x_i^2.

    ``curvature`` = (c_x, c_u, c_T), each a scalar or one value per axis. The
    default (0, 1, 1) gives J_t(x) = |x|^2 / (T - t + 1).
    """
    c_x, c_u, c_T = (_per_axis(c, d) for c in curvature)
    if np.any(c_u <= 0) or np.any(c_T <= 0) or np.any(c_x < 0):
        raise BadParams("action and terminal curvatures must be positive, state curvature nonnegative")
    ub = 2.0 * bound if action_bound is None else action_bound
    state = MixedSpace.box([-bound] * d, [bound] * d, [points] * d)
    action = MixedSpace.box([-ub] * d, [ub] * d, [action_points] * d)
    return DpModel(
        np.eye(d),
        np.eye(d),
        state,
        action,
        QuadraticCost(2.0 * c_x),
        QuadraticCost(2.0 * c_u, lower=-ub, upper=ub),
        QuadraticCost(2.0 * c_T),
        T,
    )


def lqr_coefficients(curvature, d: int, T: int) -> np.ndarray:
    """p[t, i] with J_t(x) = sum_i p[t, i] x_i^2 for the unconstrained LQR family."""
    c_x, c_u, c_T = (_per_axis(c, d) for c in curvature)
    p = np.empty((T + 1, d))
    p[T] = c_T
    for t in range(T - 1, -1, -1):
        p[t] = c_x + c_u * p[t + 1] / (c_u + p[t + 1])
    return p


def lqr_value(x, t: int, T: int, curvature=(0.0, 1.0, 1.0)) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = lqr_coefficients(curvature, x.shape[1], T)
    return x**2 @ p[t]


def lqr_policy(x, t: int, T: int, curvature=(0.0, 1.0, 1.0)) -> np.ndarray:
    """u*_t(x) = -p_{t+1} / (c_u + p_{t+1}) x per axis."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    p = lqr_coefficients(curvature, d, T)[t + 1]
    c_u = _per_axis(curvature[1], d)
    return -(p / (c_u + p)) * x


# ---------------------------------------------------------------- oracles


def _demand_sums(a: Sequence[int]) -> np.ndarray:
    a = [int(v) for v in a]
    if len(a) > ORACLE_MAX_N:
        raise BudgetExceeded(f"n = {len(a)} exceeds the 2^{ORACLE_MAX_N} enumeration budget")
    sums = np.zeros(1, dtype=np.int64)
    for v in a:
        sums = np.concatenate([sums, sums + v])
    return sums


def cdf_convolution_oracle(a: Sequence[int], Lam) -> Fraction:
    """P(sum Z_i <= Lam) for independent Z_i uniform on {0, a_i}, exactly."""
    sums = _demand_sums(a)
    if Lam < 0:
        return Fraction(0)
    return Fraction(int(np.count_nonzero(sums <= Lam)), len(sums))


def _as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(v)


def newsvendor_oracle(a: Sequence[int], lam) -> int:
    """Smallest integer z with P(sum Z_i <= z) >= lam."""
    lam = _as_fraction(lam)
    sums = np.sort(_demand_sums(a))
    total = len(sums)
    # CDF jumps only at attained sums
    for z in range(0, int(sums[-1]) + 1):
        if Fraction(int(np.searchsorted(sums, z, side="right")), total) >= lam:
            return z
    return int(sums[-1])


# ---------------------------------------------------------------- hard instance


@dataclass(frozen=True)
class HardInstanceParams:
    """Parameters of the newsvendor-equivalent stochastic DP.

    ``beta`` defaults to min(lam, 1 - lam) / (8 m^2 n^2) (with a floor of
    1/(64 m^2 n^2) when lam = 1), ``U_x`` and ``U_u`` to the smallest values
    the construction allows, and the terminal multiplier ``M`` to 10 m n.
    Computation happens on the working box [-(mn + 2), mn + 2] with spacing
    ``delta_x``; states beyond it are never reached from x_0 = 0.

    ``timing`` places the demands: "observed" lets Z_t hit x_t so every
    purchase after stage 0 sees the demand it covers; "literal" lets Z_t hit
    x_{t+1}, in which case the last demand can no longer be repaired.
    """

    n: int
    a: tuple
    lam: float
    beta: Optional[float] = None
    U_x: Optional[float] = None
    U_u: Optional[float] = None
    M: Optional[float] = None
    delta_x: float = 1.0 / 32.0
    timing: str = "observed"

    def __post_init__(self):
        a = tuple(int(v) for v in np.atleast_1d(self.a))
        object.__setattr__(self, "a", a)
        if self.n < 1 or len(a) != self.n:
            raise BadParams("a must have exactly n entries")
        if any(v <= 0 for v in a):
            raise BadParams("demand sizes must be positive integers")
        if not 0 < self.lam <= 1:
            raise BadParams("lam must lie in (0, 1]")
        if self.timing not in ("observed", "literal"):
            raise BadParams("timing must be 'observed' or 'literal'")
        if self.delta_x <= 0 or (1.0 / self.delta_x) != round(1.0 / self.delta_x):
            raise BadParams("delta_x must be 1/q for an integer q")
        mn = self.m * self.n
        lam_bar = min(self.lam, 1.0 - self.lam)
        if self.beta is None:
            b = (lam_bar if lam_bar > 0 else 0.125) / (8.0 * mn * mn)
            object.__setattr__(self, "beta", b)
        if self.beta <= 0:
            raise BadParams("beta must be positive")
        if self.U_x is None:
            object.__setattr__(self, "U_x", max(1.0 / self.beta, float(mn)))
        if self.U_u is None:
            object.__setattr__(self, "U_u", 1.0 / self.beta)
        if self.M is None:
            object.__setattr__(self, "M", 10.0 * mn)
        if self.U_x < max(1.0 / self.beta, mn) * (1 - 1e-12) or self.U_u < (1.0 / self.beta) * (1 - 1e-12):
            raise BadParams("need U_x >= max(1/beta, m n) and U_u >= 1/beta")
        if self.M <= 0:
            raise BadParams("terminal multiplier must be positive")

    @property
    def m(self) -> int:
        return max(self.a)

    @property
    def T(self) -> int:
        return self.n + 2

    @property
    def working_bound(self) -> float:
        return float(self.m * self.n + 2)


def make_hard_instance(p: HardInstanceParams, action_points: int = 4097):
    """Model and per-stage noise table (keyed by the state the shock enters)."""
    T, b = p.T, p.beta
    R = min(p.working_bound, p.U_x)
    npts = int(round(2 * R / p.delta_x)) + 1
    state = MixedSpace.box([-R], [R], [npts])
    action = MixedSpace.box([0.0], [p.U_u], [action_points])
    box = dict(lower=0.0, upper=p.U_u)
    stages = {0: {"gu": QuadraticCost([2 * b], [1.0 - p.lam], **box)}}
    for t in range(1, T - 1):
        stages[t] = {"gu": QuadraticCost([2 * b], [1.0], **box)}
    stages[T - 1] = {"B": np.array([[-1.0]]), "gu": QuadraticCost([2 * b], **box)}
    model = DpModel(
        [[1.0]], [[1.0]], state, action,
        zero_cost(1), QuadraticCost([2 * b], **box), QuadraticCost([2.0 * p.M]), T, stages=stages,
    )
    shift = 0 if p.timing == "observed" else 1
    noise = {i + shift: NoiseModel([[0.0], [-float(ai)]], [0.5, 0.5]) for i, ai in enumerate(p.a, start=1)}
    return model, noise


def hard_instance_duals(p: HardInstanceParams, window=(-1.25, 0.25), refine: int = 0) -> FixedDuals:
    """Dual lattice s_j = -(1 - lam) + 2 beta dx j over ``window``.

    Its spacing maps one dual step to one primal step of the first-stage
    policy, so policies read off the lattice land on the primal grid. Slopes
    outside the window are never needed by the decisions: a shortfall priced
    above the unit purchase cost is always bought back.
    """
    dx = p.delta_x / (2**refine)
    ds = 2.0 * p.beta * dx
    s0 = -(1.0 - p.lam)
    lo = s0 + ds * math.floor((window[0] - s0) / ds)
    hi = s0 + ds * math.ceil((window[1] - s0) / ds)
    k = int(round((hi - lo) / ds)) + 1
    return FixedDuals(RegularGrid([lo], [hi], [k]))


def refine_hard(p: HardInstanceParams, levels: int = 1) -> HardInstanceParams:
    return HardInstanceParams(p.n, p.a, p.lam, p.beta, p.U_x, p.U_u, p.M, p.delta_x / 2**levels, p.timing)


def solve_hard_instance(p: HardInstanceParams, refine: int = 0):
    """(pre-rounding first-stage action, rounded action, solution)."""
    from .dp_stoch import stoch_solve

    q = refine_hard(p, refine) if refine else p
    model, noise = make_hard_instance(q)
    sol = stoch_solve(model, noise, dual_policy=hard_instance_duals(p, refine=refine))
    _, u, _ = sol.first_stage([[0.0]])
    u0 = float(u[0, 0])
    return u0, int(math.floor(u0 + 0.5)), sol


# ---------------------------------------------------------------- lower-bound instance


def make_lower_bound_instance(d: int, k: int, alpha: Sequence[int]) -> DpModel:
    """T = 1 on {0,1}^d with J_1(x) = max_i |x_i - alpha_i| and zero running costs.

    The actions overwrite every coordinate except k, which the dynamics keep
    (A' = e_k e_k^T); hence J_0(x) = |x_k - alpha_k|. For d = 1 there is a
    single dummy action with a zero column.
    """
    alpha = np.asarray(alpha, dtype=int)
    if alpha.shape != (d,) or np.any((alpha != 0) & (alpha != 1)):
        raise BadParams("alpha must be a 0/1 vector of length d")
    if not 0 <= k < d:
        raise BadParams("need 0 <= k < d")
    A = np.zeros((d, d))
    A[k, k] = 1.0
    others = [i for i in range(d) if i != k]
    if others:
        B = np.eye(d)[:, others]
        action = MixedSpace(integer=RegularGrid([0] * len(others), [1] * len(others), [2] * len(others)))
    else:
        B = np.zeros((d, 1))
        action = MixedSpace(integer=RegularGrid([0], [0], [1]))
    state = MixedSpace(integer=RegularGrid([0] * d, [1] * d, [2] * d))
    c = B.shape[1]
    return DpModel(A, B, state, action, zero_cost(d), zero_cost(c), MaxAbsCost(alpha.astype(float)), 1)


def lower_bound_value(x, k: int, alpha) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.abs(x[:, k] - float(alpha[k]))


# ---------------------------------------------------------------- piecewise-linear instance


def make_pwl_instance(
    knots=(0.0,),
    slopes=(-1.0, 1.0),
    T: int = 2,
    bound: float = 1.0,
    points: int = 33,
    action_curvature: float = 1.0,
    action_bound: float = 2.0,
) -> DpModel:
    """x' = x + u with g_x = g_T = phi (convex piecewise linear) and g_u = c u^2."""
    phi = PiecewiseLinearCost(knots, slopes)
    state = MixedSpace.box([-bound], [bound], [points])
    action = MixedSpace.box([-action_bound], [action_bound], [2 * points - 1])
    gu = QuadraticCost([2.0 * action_curvature], lower=-action_bound, upper=action_bound)
    return DpModel([[1.0]], [[1.0]], state, action, phi, gu, phi, T)


# ---------------------------------------------------------------- random families


def random_quadratic_model(rng: np.random.Generator, d: int = 1, T: int = 1, points: int = 33) -> DpModel:
    """Contracting diagonal dynamics and random diagonal quadratic costs.

    The action box is wide enough that optimal successors stay in the state box.
    """
    A = np.diag(rng.uniform(0.3, 1.0, d))
    B = np.diag(rng.uniform(0.5, 1.5, d))
    cx = rng.uniform(0.0, 2.0, d)
    cu = rng.uniform(0.5, 2.0, d)
    cT = rng.uniform(0.5, 2.0, d)
    bx = rng.uniform(-0.2, 0.2, d)
    R = 1.0
    ub = 2.0 * R / float(np.min(np.diag(B)))
    state = MixedSpace.box([-R] * d, [R] * d, [points] * d)
    action = MixedSpace.box([-ub] * d, [ub] * d, [2 * points - 1] * d)
    return DpModel(A, B, state, action, QuadraticCost(cx, bx), QuadraticCost(cu, lower=-ub, upper=ub),
                   QuadraticCost(cT), T)


def two_point_noise(rng: np.random.Generator, d: int, scale: float = 0.1) -> NoiseModel:
    xi = rng.uniform(-scale, scale, d)
    p = float(rng.uniform(0.2, 0.8))
    return NoiseModel(np.stack([xi, -xi * p / (1 - p)]), [p, 1.0 - p])


# ---------------------------------------------------------------- instance specs


def _parse_value(v: str):
    if ";" in v:
        return tuple(_parse_value(x) for x in v.split(";") if x)
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def parse_instance_spec(spec: str):
    """'name:key=val,key=val' -> (name, kwargs); vector values use ';'."""
    name, _, rest = spec.partition(":")
    kw = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"malformed instance parameter {item!r}")
        kw[key.strip()] = _parse_value(val.strip())
    return name.strip(), kw


@dataclass
class BuiltInstance:
    model: DpModel
    noise: Optional[object] = None
    meta: dict = field(default_factory=dict)


def build_instance(spec: Union[str, tuple], seed: int = 0) -> BuiltInstance:
    """Construct a named family from a spec string; randomness comes from ``seed``."""
    name, kw = parse_instance_spec(spec) if isinstance(spec, str) else spec
    rng = np.random.default_rng(seed)
    if name == "lqr":
        d, T = int(kw.get("d", 1)), int(kw.get("T", 3))
        curv = tuple(kw.get(k, v) for k, v in (("cx", 0.0), ("cu", 1.0), ("cT", 1.0)))
        m = make_lqr(d, T, curv, float(kw.get("R", 1.0)), int(kw.get("N", 65)))
        return BuiltInstance(m, None, {"family": "lqr", "curvature": curv})
    if name == "hard":
        n = int(kw.get("n", 2))
        a = kw.get("a")
        if a is None:
            a = tuple(int(v) for v in rng.integers(1, 6, n))
        a = tuple(np.atleast_1d(a).tolist())
        p = HardInstanceParams(n, a, float(kw.get("lam", 0.5)), timing=str(kw.get("timing", "observed")))
        m, noise = make_hard_instance(p)
        return BuiltInstance(m, noise, {"family": "hard", "params": p})
    if name in ("lower_bound", "lb"):
        d, k = int(kw.get("d", 3)), int(kw.get("k", 0))
        alpha = kw.get("alpha")
        alpha = rng.integers(0, 2, d) if alpha is None else np.atleast_1d(alpha)
        return BuiltInstance(make_lower_bound_instance(d, k, alpha), None,
                             {"family": "lower_bound", "k": k, "alpha": [int(v) for v in alpha]})
    if name == "pwl":
        knots = np.atleast_1d(kw.get("knots", (0.0,))).astype(float)
        slopes = np.atleast_1d(kw.get("slopes", (-1.0, 1.0))).astype(float)
        m = make_pwl_instance(knots, slopes, int(kw.get("T", 2)), float(kw.get("R", 1.0)), int(kw.get("N", 33)))
        return BuiltInstance(m, None, {"family": "pwl"})
    if name == "random":
        d, T = int(kw.get("d", 1)), int(kw.get("T", 2))
        m = random_quadratic_model(rng, d, T, int(kw.get("N", 33)))
        noise = two_point_noise(rng, d, float(kw.get("xi", 0.1))) if kw.get("stochastic", 0) else None
        return BuiltInstance(m, noise, {"family": "random"})
    raise ValueError(f"unknown instance family {name!r}")
