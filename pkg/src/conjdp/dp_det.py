"""Deterministic convex DP: Bellman oracle, conjugate operator, solver, policy.

The conjugate operator evaluates

    J_t(x) = g_x(x) + h*(A'x),   h(s) = g_u*(-B'^T s) + J_{t+1}*(s),

with both transforms discrete: J_{t+1}* lives on a dual grid, and h* is a
maximum over that same dual grid evaluated at the exact points A'x.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .conditioning import CurvatureReport, estimate_curvature, lipschitz_estimate
from .costs import Cost
from .errors import NoActions, NoConjugate
from .grid import MixedSpace, RegularGrid, hausdorff_to_box
from .lft import (
    DiscreteFn,
    DualGrid,
    _as_grid,
    canonical_dual_grid,
    check_axis_convex,
    conjugate_at,
    covering_dual_grid,
    dlft_fast,
    factorized_lft,
    axis_gradients,
    interpolate,
    is_axis_convex,
)
from .model import DpModel, StageData

CLAMP_TOL = 1e-9
_BELLMAN_CHUNK = 1 << 21


# ---------------------------------------------------------------- dual policies


@dataclass(frozen=True)
class CanonicalDuals:
    """Per-axis extreme discrete gradients of the stage input, K points per axis."""

    K: Union[int, tuple]

    def __call__(self, J: DiscreteFn, t: int) -> DualGrid:
        return canonical_dual_grid(J, self.K)


@dataclass(frozen=True)
class CoveringDuals:
    """Extreme gradients widened by one dual spacing on each side."""

    K: Union[int, tuple]

    def __call__(self, J: DiscreteFn, t: int) -> DualGrid:
        return covering_dual_grid(J, self.K)


@dataclass(frozen=True)
class FixedDuals:
    """The same dual grid at every stage."""

    grid: RegularGrid

    def __call__(self, J: DiscreteFn, t: int) -> DualGrid:
        return DualGrid(_as_grid(self.grid))


@dataclass(frozen=True)
class ClippedDuals:
    """Canonical range intersected with a fixed window, K points per axis.

    Useful when far-away steep slopes (hard state constraints encoded by large
    penalties) would otherwise dilute the dual resolution where it matters.
    """

    K: Union[int, tuple]
    lower: tuple
    upper: tuple

    def __call__(self, J: DiscreteFn, t: int) -> DualGrid:
        g = canonical_dual_grid(J, self.K).grid
        lo = np.maximum(g.lower, self.lower)
        hi = np.minimum(g.upper, self.upper)
        hi = np.maximum(hi, lo)
        n = [k if h > l else 1 for k, l, h in zip(g.points_per_axis, lo, hi)]
        return DualGrid(RegularGrid(lo, hi, n))


@dataclass(frozen=True)
class LatticeDuals:
    """Smallest grid on the lattice ``spacing * Z`` covering the gradient range.

    When the values live on a matching lattice the gradients are lattice
    points, so the grid coincides with the canonical one.
    """

    spacing: Union[float, tuple]

    def __call__(self, J: DiscreteFn, t: int) -> DualGrid:
        d = J.grid.dim
        h = np.broadcast_to(np.atleast_1d(np.asarray(self.spacing, dtype=float)), (d,))
        lo, hi, n = np.zeros(d), np.zeros(d), []
        for k in range(d):
            c = axis_gradients(J, k)
            if c is None:
                n.append(1)
                continue
            # gradients within rounding noise of a lattice point snap to it
            a = math.floor(float(c.min()) / h[k] + 1e-9)
            b = math.ceil(float(c.max()) / h[k] - 1e-9)
            lo[k], hi[k] = a * h[k], max(a, b) * h[k]
            n.append(max(a, b) - a + 1)
        return DualGrid(RegularGrid(lo, hi, n))


DualPolicy = Callable[[DiscreteFn, int], DualGrid]


def resolve_dual_policy(policy, default_K: int) -> DualPolicy:
    if policy is None or policy == "canonical":
        return CanonicalDuals(default_K)
    if policy == "covering":
        return CoveringDuals(default_K)
    if isinstance(policy, (DualGrid, RegularGrid)):
        return FixedDuals(_as_grid(policy))
    if callable(policy):
        return policy
    raise ValueError(f"unknown dual policy {policy!r}")


# ---------------------------------------------------------------- Bellman oracle


@dataclass
class BellmanResult:
    value: DiscreteFn
    policy: np.ndarray
    max_violation: float
    violated: bool
    action_slack: float
    interp_slack: float

    @property
    def slack(self) -> float:
        return self.action_slack + self.interp_slack


def interpolation_slack(J: DiscreteFn) -> float:
    """Gap between the multilinear interpolant and the convex extension of J.

    Measured at cell centres and edge midpoints. In one dimension the linear
    interpolant of convex data is already convex, so the gap is zero.
    """
    g = J.grid
    if g.dim == 1:
        if is_axis_convex(J):
            return 0.0
        x, y = g.axis(0), J.values
        return float(np.max(y - _lower_hull(x, y)))
    axes = []
    for k in range(g.dim):
        a = g.axis(k)
        mids = 0.5 * (a[1:] + a[:-1]) if len(a) > 1 else a
        axes.append(np.union1d(a, mids))
    mesh = np.meshgrid(*axes, indexing="ij")
    probe = np.stack([m.ravel() for m in mesh], axis=1)
    K = tuple(4 * n + 1 if n > 1 else 1 for n in g.points_per_axis)
    duals = covering_dual_grid(J, K)
    Js, _ = dlft_fast(J, duals, check_convex=False)
    env, _ = conjugate_at(Js, probe)
    lin, _ = interpolate(J, probe)
    return float(np.max(np.abs(lin - env)))


def _lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lower convex envelope of the points (x_i, y_i), evaluated at x (sorted)."""
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (y[b] - y[a]) * (x[i] - x[a]) >= (y[i] - y[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], y[hull])


def _golden_refine(obj, lo, hi, iters: int = 90):
    """Vectorized golden-section search of a convex objective on [lo, hi]."""
    r = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    c = b - r * (b - a)
    d = a + r * (b - a)
    fc, fd = obj(c), obj(d)
    for _ in range(iters):
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nc = b - r * (b - a)
        nd = a + r * (b - a)
        c = np.where(left, nc, d)
        d = np.where(left, c, nd)
        fc_new = obj(c)
        fd_new = obj(d)
        fc, fd = fc_new, fd_new
    mid = 0.5 * (a + b)
    return mid, obj(mid)


def _stage_objective(J: DiscreteFn, st: StageData, X: np.ndarray, U: np.ndarray, noise=None):
    """g_u(u) + E J_interp(A'x + B'u + xi) for all pairs; returns (obj, clamp distance)."""
    base = X @ st.A.T
    move = U @ st.B.T
    n, m = X.shape[0], U.shape[0]
    d = X.shape[1]
    Y = base[:, None, :] + move[None, :, :]
    if noise is None:
        vals, dist = interpolate(J, Y.reshape(-1, d))
        vals, dist = vals.reshape(n, m), dist.reshape(n, m)
    else:
        vals = np.zeros((n, m))
        dist = np.zeros((n, m))
        for xi, p in zip(noise.support, noise.probs):
            v, dd = interpolate(J, (Y + xi).reshape(-1, d))
            vals += p * v.reshape(n, m)
            dist = np.maximum(dist, np.where(p > 0, dd.reshape(n, m), 0.0))
    return st.gu(U)[None, :] + vals, dist


def bellman_step(
    J: DiscreteFn,
    model: DpModel,
    action_grid: Optional[RegularGrid] = None,
    t: int = 0,
    refine: bool = True,
    noise=None,
    states: Optional[np.ndarray] = None,
) -> BellmanResult:
    """Brute-force Bellman update by exhaustive search over discretized actions.

    J is interpolated multilinearly at A'x + B'u; queries outside the grid box
    are clamped and the largest clamping distance of a chosen action is
    reported. With a single continuous action coordinate the winning grid
    action is polished by golden-section search between its two neighbours.
    ``states`` overrides the evaluation points (defaults to J's grid).
    """
    ag = model.action_grid if action_grid is None else action_grid
    if ag.size == 0:
        raise NoActions("empty action grid")
    st = model.stage(t)
    X = J.grid.points() if states is None else np.atleast_2d(states)
    U = ag.points()
    n, m = X.shape[0], U.shape[0]
    step = max(1, _BELLMAN_CHUNK // max(m, 1))
    best = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    viol = np.empty(n)
    for a in range(0, n, step):
        obj, dist = _stage_objective(J, st, X[a : a + step], U, noise)
        i = np.argmin(obj, axis=1)
        rows = np.arange(len(i))
        best[a : a + step] = obj[rows, i]
        arg[a : a + step] = i
        viol[a : a + step] = dist[rows, i]
    policy = U[arg].copy()
    coarse = best.copy()
    continuous_1d = ag.dim == 1 and ag.points_per_axis[0] > 1 and model.c_r == 1
    if refine and continuous_1d:
        h = ag.spacing[0]
        lo = np.maximum(policy[:, 0] - h, ag.lower[0])
        hi = np.minimum(policy[:, 0] + h, ag.upper[0])

        def obj1(u):
            Y = X @ st.A.T + u[:, None] * st.B[:, 0][None, :]
            if noise is None:
                v, _ = interpolate(J, Y)
            else:
                v = sum(p * interpolate(J, Y + xi)[0] for xi, p in zip(noise.support, noise.probs))
            return st.gu(u[:, None]) + v

        u_ref, f_ref = _golden_refine(obj1, lo, hi)
        better = f_ref < best
        best = np.where(better, f_ref, best)
        policy[better, 0] = u_ref[better]
        Y = X @ st.A.T + policy @ st.B.T
        if noise is None:
            viol = interpolate(J, Y)[1]
        else:
            viol = np.max(
                [np.where(p > 0, interpolate(J, Y + xi)[1], 0.0) for xi, p in zip(noise.support, noise.probs)], axis=0
            )
        action_slack = float(np.max(coarse - best))
    else:
        # rigorous first-order allowance for searching a grid instead of the box
        # (integer action coordinates are searched exhaustively and add nothing)
        cont = 0.5 * float(np.linalg.norm(ag.spacing[: model.c_r]))
        if cont > 0:
            L_obj = _gu_lipschitz(st.gu, ag) + np.linalg.norm(st.B, 2) * lipschitz_estimate(J)
            action_slack = float(L_obj * cont)
        else:
            action_slack = 0.0
    values = st.gx(X) + best
    grid = J.grid if states is None else None
    max_v = float(np.max(viol)) if n else 0.0
    scale = CLAMP_TOL * (1.0 + float(np.max(np.abs(np.concatenate([J.grid.lower, J.grid.upper])))))
    fn = DiscreteFn(grid, values) if grid is not None else values
    # integer-only states keep every transition on grid points: nothing is interpolated
    islack = interpolation_slack(J) if model.d_r > 0 else 0.0
    return BellmanResult(fn, policy, max_v, max_v > scale, action_slack, islack)


def _gu_lipschitz(gu: Cost, ag: RegularGrid) -> float:
    pts = ag.points()
    if len(pts) < 2:
        return 0.0
    v = gu(pts)
    fn = DiscreteFn(ag, v)
    return lipschitz_estimate(fn)


# ---------------------------------------------------------------- conjugate operator


@dataclass
class ConjStep:
    value: DiscreteFn
    s_index: np.ndarray  # flat dual index of the step-3 optimizer per state
    s_star: np.ndarray  # the optimizer itself, (N, d)
    h: DiscreteFn  # g_u*(-B'^T s) + J*(s) on the dual grid
    duals: DualGrid


def _h_table(Jp: DiscreteFn, st: StageData, duals: DualGrid, check_convex: bool = True, transform=None) -> DiscreteFn:
    if transform is None:
        Js, _ = dlft_fast(Jp, duals, check_convex=check_convex)
        js = Js.values
    else:
        if check_convex:
            check_axis_convex(Jp)
        js, _ = transform(Jp.values, Jp.grid.axes(), duals.axes())
    S = duals.points()
    try:
        gu_star = st.gu.conjugate(-(S @ st.B))
    except NotImplementedError as exc:
        raise NoConjugate(str(exc)) from exc
    return DiscreteFn(duals.grid, gu_star + js)


def hstar_at(h: DiscreteFn, A: np.ndarray, grid: Optional[RegularGrid] = None, points=None, shift=None,
             transform=None):
    """max_s <A x, s> - h(s) for x on a product grid (optionally shifted) or at rows.

    For diagonal A and grid input the queries form a product grid and the
    factorized transform (or the supplied drop-in replacement) is used;
    otherwise the exact per-point maximum.
    """
    if grid is not None and np.all(A == np.diag(np.diag(A))):
        axes = grid.axes()
        if shift is not None:
            axes = [a + s for a, s in zip(axes, shift)]
        q_axes = [a * A[k, k] for k, a in enumerate(axes)]
        vals, arg = (transform or factorized_lft)(h.values, h.grid.axes(), q_axes)
        return vals, arg
    if points is None:
        points = grid.points()
        if shift is not None:
            points = points + shift
    return conjugate_at(h, np.atleast_2d(points) @ A.T)


def conjugate_dp_step(
    Jp: DiscreteFn, model: DpModel, duals, t: int = 0, check_convex: bool = True, transform=None
) -> ConjStep:
    """One application of the conjugate DP operator on the grid of ``Jp``.

    ``transform`` replaces the factorized transform (same signature as
    ``factorized_lft``); the simulator uses it to run its relabeling in place.
    """
    duals = duals if isinstance(duals, DualGrid) else DualGrid(_as_grid(duals))
    st = model.stage(t)
    h = _h_table(Jp, st, duals, check_convex, transform)
    hv, arg = hstar_at(h, st.A, grid=Jp.grid, transform=transform)
    X = Jp.grid.points()
    values = st.gx(X) + hv
    S = duals.points()
    return ConjStep(DiscreteFn(Jp.grid, values), arg, S[arg], h, duals)


def evaluate_conjugate(step: ConjStep, model: DpModel, X, t: int = 0):
    """Value and dual optimizer of the conjugate operator at arbitrary states."""
    st = model.stage(t)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    hv, arg = conjugate_at(step.h, X @ st.A.T)
    return st.gx(X) + hv, step.duals.points()[arg]


def error_bounds(model: DpModel, state_grid, duals, L_J: float, t: Optional[int] = None):
    """(E1, E2) for one application of the conjugate operator."""
    if isinstance(state_grid, MixedSpace):
        dH = state_grid.continuous_hausdorff()
        d = state_grid.dim
    else:
        g = _as_grid(state_grid)
        d = g.dim
        dH = 0.5 * float(np.linalg.norm(g.spacing[: model.d_r]))
    factor = 1.0 + math.sqrt(d)
    E1 = factor * L_J * dH
    E2 = factor * (model.tau() + model.eta(t)) * hausdorff_to_box(_as_grid(duals))
    return E1, E2


# ---------------------------------------------------------------- solver


def curvature_report(f: DiscreteFn) -> CurvatureReport:
    if f.grid.dim == 1 and f.grid.size >= 3 and f.grid.spacing[0] > 0:
        return estimate_curvature(f)
    L = lipschitz_estimate(f)
    Lp, mu = 0.0, math.inf
    for k in range(f.grid.dim):
        n, h = f.grid.points_per_axis[k], f.grid.spacing[k]
        if n < 3 or h == 0:
            continue
        sec = np.diff(f.shaped, n=2, axis=k) / (h * h)
        Lp = max(Lp, float(sec.max()))
        mu = min(mu, float(sec.min()))
    if math.isinf(mu):
        mu = 0.0
    mu = max(mu, 0.0)
    return CurvatureReport(L, Lp, mu, Lp / mu if mu > 0 else math.inf)


@dataclass
class StageReport:
    stage: int
    value: DiscreteFn
    E1: float
    E2: float
    curvature: CurvatureReport
    L_J: float = 0.0
    duals: Optional[DualGrid] = None
    s_index: Optional[np.ndarray] = None
    h: Optional[DiscreteFn] = None
    extra: dict = field(default_factory=dict)

    @property
    def bound(self) -> float:
        return self.E1 + self.E2


def reports_to_csv(reports: List[StageReport], extra_cols=()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "E1", "E2", "bound", "cumulative_bound", "L_J", "kappa"] + list(extra_cols))
    cum = 0.0
    for r in sorted(reports, key=lambda r: -r.stage):
        cum += r.bound
        row = [r.stage, f"{r.E1:.12g}", f"{r.E2:.12g}", f"{r.bound:.12g}", f"{cum:.12g}", f"{r.L_J:.12g}"]
        k = r.curvature.condition_number
        row.append("inf" if math.isinf(k) else f"{k:.12g}")
        row += [_fmt(r.extra.get(c, "")) for c in extra_cols]
        w.writerow(row)
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return v


def solve(
    model: DpModel,
    state_grid: Optional[RegularGrid] = None,
    dual_policy=None,
    T: Optional[int] = None,
    K: Optional[int] = None,
    transform=None,
) -> List[StageReport]:
    """Run the conjugate operator from the terminal stage down to stage 0.

    Returns one report per stage, ordered by stage index; report t holds the
    approximation of J_t and the per-stage bound E1 + E2 (E1 recomputed from
    the Lipschitz estimate of J_{t+1}).
    """
    grid = model.state_grid if state_grid is None else _as_grid(state_grid)
    T = model.T if T is None else T
    K = K if K is not None else max(grid.points_per_axis)
    policy = resolve_dual_policy(dual_policy, K)
    J = DiscreteFn(grid, model.gT(grid.points()))
    reports = []
    for t in range(T - 1, -1, -1):
        duals = policy(J, t)
        step = conjugate_dp_step(J, model, duals, t, transform=transform)
        L_J = lipschitz_estimate(J)
        E1, E2 = error_bounds(model, grid, duals, L_J, t)
        reports.append(
            StageReport(t, step.value, E1, E2, curvature_report(step.value), L_J, duals, step.s_index, step.h)
        )
        J = step.value
    return sorted(reports, key=lambda r: r.stage)


def bellman_solve(
    model: DpModel,
    state_grid: Optional[RegularGrid] = None,
    action_grid: Optional[RegularGrid] = None,
    T: Optional[int] = None,
    refine: bool = True,
) -> List[BellmanResult]:
    grid = model.state_grid if state_grid is None else _as_grid(state_grid)
    T = model.T if T is None else T
    J = DiscreteFn(grid, model.gT(grid.points()))
    out = []
    for t in range(T - 1, -1, -1):
        res = bellman_step(J, model, action_grid, t, refine=refine)
        out.append(res)
        J = res.value
    return out[::-1]


# ---------------------------------------------------------------- policy


def extract_policy(x, s_star, model: DpModel, t: int = 0) -> np.ndarray:
    """argmin_u g_u(u) + <u, B'^T s*>; rows of ``s_star`` pair with rows of ``x``."""
    st = model.stage(t)
    s = np.atleast_2d(np.asarray(s_star, dtype=float))
    mod = st.gu.moduli()
    if mod is None or mod[1] <= 0:
        warnings.warn("action cost is not strongly convex; policy error bound unavailable", stacklevel=2)
    u = st.gu.argmin_linear(s @ st.B)
    return u[0] if np.ndim(s_star) == 1 else u


def policy_error_bound(eps: float, mu_gu: float) -> float:
    if mu_gu <= 0:
        return math.inf
    return math.sqrt(4.0 * eps / mu_gu)


def epsilon_grid_sizes(T: int, epsilon: float, d_r: int, d: int) -> tuple:
    """Per-axis primal and dual point counts for a target accuracy.

    N_r ~ (T/eps)^{d_r} and K ~ (T/eps)^d in total, i.e. about T/eps points per
    axis; each axis count is the next power of two (plus one endpoint so the
    spacing is the box width over a power of two).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    per_axis = 1 << max(1, math.ceil(math.log2(T / epsilon)))
    return per_axis + 1, per_axis + 1


# ---------------------------------------------------------------- estimators


class ConjugateDPSolver(BaseEstimator):
    """Finite-horizon solver using the conjugate DP operator.

    ``fit(model)`` solves on the model's state grid (or ``state_points`` per
    axis) with ``dual_points`` per dual axis; ``predict`` returns the stage-0
    value at arbitrary states and ``predict_policy`` the first action.
    """

    def __init__(self, dual_points: Optional[int] = None, dual_policy="canonical", state_points=None):
        self.dual_points = dual_points
        self.dual_policy = dual_policy
        self.state_points = state_points

    def _grid(self, model: DpModel) -> RegularGrid:
        g = model.state_grid
        if self.state_points is None:
            return g
        n = np.broadcast_to(np.atleast_1d(self.state_points), (g.dim,))
        return RegularGrid(g.lower, g.upper, n)

    def fit(self, model: DpModel, y=None):
        grid = self._grid(model)
        K = self.dual_points or max(grid.points_per_axis)
        self.reports_ = solve(model, grid, resolve_dual_policy(self.dual_policy, K))
        self.model_ = model
        self.n_features_in_ = model.dim
        return self

    def _stage0(self):
        r = self.reports_[0]
        return ConjStep(r.value, r.s_index, r.duals.points()[r.s_index], r.h, r.duals)

    def predict(self, X):
        check_is_fitted(self, "reports_")
        X = check_array(X)
        v, _ = evaluate_conjugate(self._stage0(), self.model_, X, 0)
        return v

    def predict_policy(self, X):
        check_is_fitted(self, "reports_")
        X = check_array(X)
        _, s = evaluate_conjugate(self._stage0(), self.model_, X, 0)
        return extract_policy(X, s, self.model_, 0)

    @property
    def error_bound_(self) -> float:
        check_is_fitted(self, "reports_")
        return float(sum(r.bound for r in self.reports_))


class BellmanDPSolver(BaseEstimator):
    """Reference solver by exhaustive action search with interpolation."""

    def __init__(self, action_points=None, refine: bool = True):
        self.action_points = action_points
        self.refine = refine

    def fit(self, model: DpModel, y=None):
        ag = model.action_grid
        if self.action_points is not None:
            n = np.broadcast_to(np.atleast_1d(self.action_points), (ag.dim,))
            ag = RegularGrid(ag.lower, ag.upper, n)
        self.results_ = bellman_solve(model, action_grid=ag, refine=self.refine)
        self.model_ = model
        self.n_features_in_ = model.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "results_")
        X = check_array(X)
        return interpolate(self.results_[0].value, X)[0]

    @property
    def violated_(self) -> bool:
        check_is_fitted(self, "results_")
        return any(r.violated for r in self.results_)
