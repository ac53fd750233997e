"""Stochastic convex DP over post-decision states with finite-support noise.

With m = A'x + B'u the post-decision state and xi_t the shock entering x_t,

    V_{T-1}(m) = E g_T(m + xi_T),
    V_{t-1}(m) = sum_k p_k [ g_x(m + xi_k) + h_t*(A'(m + xi_k)) ],
    h_t(s)     = g_u*(-B'^T s) + V_t*(s),

and the first decision is read off h_0 at A'x_0. Every expectation is a
compensated sum, so a point-mass noise at zero reproduces the deterministic
solver bit for bit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .conditioning import lipschitz_estimate
from .dp_det import (
    BellmanResult,
    StageReport,
    _h_table,
    bellman_step,
    curvature_report,
    error_bounds,
    extract_policy,
    hstar_at,
    resolve_dual_policy,
)
from .grid import MixedSpace, RegularGrid
from .lft import DiscreteFn, DualGrid, _as_grid, conjugate_at
from .model import DpModel, NoiseModel, NoiseSpec, noise_at


def compensated_sum(terms) -> np.ndarray:
    """Neumaier summation of a sequence of equally shaped arrays."""
    it = iter(terms)
    total = np.array(next(it), dtype=float, copy=True)
    comp = np.zeros_like(total)
    for x in it:
        t = total + x
        big = np.abs(total) >= np.abs(x)
        comp += np.where(big, (total - t) + x, (x - t) + total)
        total = t
    return total + comp


def _box_corners(lower, upper) -> np.ndarray:
    return np.array(list(itertools.product(*zip(lower, upper))), dtype=float)


@dataclass(frozen=True)
class PostDecisionSpace:
    """Grid over post-decision states m = A'x + B'u."""

    grid: RegularGrid

    @classmethod
    def covering(cls, model: DpModel, points_per_axis, t: Optional[int] = None) -> "PostDecisionSpace":
        """Bounding box of {A'x + B'u} over the state and action boxes."""
        lo, hi = image_box(model, t)
        return cls(RegularGrid(lo, hi, np.broadcast_to(np.atleast_1d(points_per_axis), lo.shape)))

    def uncovered(self, model: DpModel, noise: NoiseModel) -> float:
        """Largest distance by which m + xi_k leaves the state box (0 if covered)."""
        g, s = self.grid, model.state_grid
        lo = g.lower + noise.support.min(axis=0)
        hi = g.upper + noise.support.max(axis=0)
        return float(max(np.max(s.lower - lo, initial=0.0), np.max(hi - s.upper, initial=0.0)))


def image_box(model: DpModel, t: Optional[int] = None):
    ts = range(model.T) if t is None else [t]
    sc = _box_corners(model.state_grid.lower, model.state_grid.upper)
    ac = _box_corners(model.action_grid.lower, model.action_grid.upper)
    lo = np.full(model.dim, np.inf)
    hi = np.full(model.dim, -np.inf)
    for s in ts:
        st = model.stage(s)
        ax, bu = sc @ st.A.T, ac @ st.B.T
        lo = np.minimum(lo, ax.min(axis=0) + bu.min(axis=0))
        hi = np.maximum(hi, ax.max(axis=0) + bu.max(axis=0))
    return lo, hi


# ---------------------------------------------------------------- Bellman baselines


def stoch_bellman_step(J: DiscreteFn, model: DpModel, noise: NoiseModel, action_grid=None, t: int = 0,
                       refine: bool = True) -> BellmanResult:
    """g_x(x) + min_u g_u(u) + sum_k p_k J(A'x + B'u + xi_k) on J's grid."""
    return bellman_step(J, model, action_grid, t, refine=refine, noise=noise)


def post_decision_bellman_step(Vp: DiscreteFn, model: DpModel, noise: NoiseModel, action_grid=None, t: int = 1,
                               refine: bool = True):
    """Reference for one post-decision step: sum_k p_k DP_t[Vp](m + xi_k) on Vp's grid.

    Returns (values, slack, max clamping distance).
    """
    M = Vp.grid.points()
    terms, slack, viol = [], 0.0, 0.0
    for xi, p in zip(noise.support, noise.probs):
        res = bellman_step(Vp, model, action_grid, t, refine=refine, states=M + xi)
        terms.append(p * res.value)
        slack = max(slack, res.slack)
        viol = max(viol, res.max_violation if p > 0 else 0.0)
    return compensated_sum(terms), slack, viol


# ---------------------------------------------------------------- conjugate route


@dataclass
class StochStep:
    value: DiscreteFn
    s_index: np.ndarray  # (r, N) flat dual optimizer per noise outcome and point
    h: DiscreteFn
    duals: DualGrid
    max_outside: float  # largest distance by which m + xi_k left the state box


def _outside(points: np.ndarray, box: RegularGrid) -> float:
    below = np.max(box.lower - points, initial=0.0)
    above = np.max(points - box.upper, initial=0.0)
    return float(max(below, above, 0.0))


def conj_stoch_step(Vp: DiscreteFn, model: DpModel, noise: NoiseModel, duals, t: int = 1,
                    check_convex: bool = True, transform=None) -> StochStep:
    """One conjugate post-decision step: V_t -> V_{t-1} on Vp's grid.

    ``t`` is the stage whose decision the conjugates resolve (its A', B', g_x,
    g_u are used). Queries m + xi_k are not clamped: h* is evaluated exactly
    at every query, and the distance to the state box is only reported.
    """
    duals = duals if isinstance(duals, DualGrid) else DualGrid(_as_grid(duals))
    st = model.stage(t)
    h = _h_table(Vp, st, duals, check_convex, transform)
    grid = Vp.grid
    M = grid.points()
    terms, idx, out = [], [], 0.0
    for xi, p in zip(noise.support, noise.probs):
        hv, arg = hstar_at(h, st.A, grid=grid, shift=xi, transform=transform)
        X = M + xi
        terms.append(p * (hv + st.gx(X)))
        idx.append(arg)
        if p > 0:
            out = max(out, _outside(X, model.state_grid))
    return StochStep(DiscreteFn(grid, compensated_sum(terms)), np.array(idx), h, duals, out)


@dataclass
class StochSolution:
    """Post-decision value functions V_0..V_{T-1} plus the stage-0 dual table."""

    reports: List[StageReport]  # report t holds V_t
    model: DpModel
    noise: NoiseSpec
    h0: DiscreteFn
    duals0: DualGrid
    extra: dict = field(default_factory=dict)

    def first_stage(self, x0, t: int = 0):
        """(J_0(x0), u_0, s*) from the stage-0 dual table."""
        X = np.atleast_2d(np.asarray(x0, dtype=float))
        st = self.model.stage(0)
        hv, arg = conjugate_at(self.h0, X @ st.A.T)
        s = self.duals0.points()[arg]
        u = extract_policy_stoch(X, s, self.model, 0)
        return st.gx(X) + hv, u, s

    def first_stage_grid(self, grid: RegularGrid, transform=None) -> DiscreteFn:
        """J_0 on a product grid, through the same factorized path as the deterministic solver."""
        st = self.model.stage(0)
        hv, _ = hstar_at(self.h0, st.A, grid=grid, transform=transform)
        return DiscreteFn(grid, st.gx(grid.points()) + hv)

    @property
    def error_bound(self) -> float:
        return float(sum(r.bound for r in self.reports)) + self.extra.get("first_stage_bound", 0.0)


def terminal_expectation(model: DpModel, grid: RegularGrid, noise: NoiseModel) -> DiscreteFn:
    M = grid.points()
    return DiscreteFn(grid, compensated_sum([p * model.gT(M + xi) for xi, p in zip(noise.support, noise.probs)]))


def stoch_solve(
    model: DpModel,
    noise: NoiseSpec,
    grid=None,
    dual_policy=None,
    T: Optional[int] = None,
    K: Optional[int] = None,
    transform=None,
) -> StochSolution:
    """T-fold stochastic recursion over post-decision states.

    ``noise`` is one NoiseModel for every stage or a per-stage table indexed by
    the state the shock enters (1..T). Reports are ordered by stage; report
    T-1 is the terminal expectation (no conjugates, zero bound) and the
    stage-0 decision is available through ``StochSolution.first_stage``.
    """
    T = model.T if T is None else T
    if grid is None:
        g = model.state_grid
    elif isinstance(grid, PostDecisionSpace):
        g = grid.grid
    elif isinstance(grid, MixedSpace):
        g = grid.grid
    else:
        g = _as_grid(grid)
    K = K if K is not None else max(g.points_per_axis)
    policy = resolve_dual_policy(dual_policy, K)
    d = model.dim
    V = terminal_expectation(model, g, noise_at(noise, T, d))
    reports = [StageReport(T - 1, V, 0.0, 0.0, curvature_report(V), lipschitz_estimate(V))]
    outside = 0.0
    for t in range(T - 1, 0, -1):
        nz = noise_at(noise, t, d)
        duals = policy(V, t)
        step = conj_stoch_step(V, model, nz, duals, t, transform=transform)
        L = lipschitz_estimate(V)
        E1, E2 = error_bounds(model, g, duals, L, t)
        outside = max(outside, step.max_outside)
        reports.append(
            StageReport(t - 1, step.value, E1, E2, curvature_report(step.value), L, duals, step.s_index, step.h,
                        {"max_outside": step.max_outside})
        )
        V = step.value
    duals0 = policy(V, 0)
    h0 = _h_table(V, model.stage(0), duals0, transform=transform)
    E1, E2 = error_bounds(model, g, duals0, lipschitz_estimate(V), 0)
    reports.sort(key=lambda r: r.stage)
    return StochSolution(reports, model, noise, h0, duals0,
                         {"first_stage_bound": E1 + E2, "max_outside": outside})


def extract_policy_stoch(x, s_star, model: DpModel, t: int = 0) -> np.ndarray:
    """Policy at state x from the dual optimizer recorded at A'x."""
    return extract_policy(x, s_star, model, t)


def stoch_bellman_solve(model: DpModel, noise: NoiseSpec, action_grid=None, T=None, refine=True):
    """Reference stochastic recursion on the state grid: J_T = g_T, J_t = DP_t[E J_{t+1}(. + xi_{t+1})]."""
    T = model.T if T is None else T
    g = model.state_grid
    J = DiscreteFn(g, model.gT(g.points()))
    out = []
    for t in range(T - 1, -1, -1):
        res = stoch_bellman_step(J, model, noise_at(noise, t + 1, model.dim), action_grid, t, refine)
        out.append(res)
        J = res.value
    return out[::-1]


class ConjugateStochSolver(BaseEstimator):
    """Stochastic solver; ``fit(model, noise)``, then ``predict`` gives J_0 and
    ``predict_policy`` the first decision at arbitrary initial states."""

    def __init__(self, dual_points: Optional[int] = None, dual_policy="canonical"):
        self.dual_points = dual_points
        self.dual_policy = dual_policy

    def fit(self, model: DpModel, noise: NoiseSpec = None):
        noise = NoiseModel.zero(model.dim) if noise is None else noise
        K = self.dual_points or max(model.state_grid.points_per_axis)
        self.solution_ = stoch_solve(model, noise, dual_policy=resolve_dual_policy(self.dual_policy, K))
        self.n_features_in_ = model.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        return self.solution_.first_stage(check_array(X))[0]

    def predict_policy(self, X):
        check_is_fitted(self, "solution_")
        return self.solution_.first_stage(check_array(X))[1]
