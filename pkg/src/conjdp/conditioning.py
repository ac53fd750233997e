"""Curvature diagnostics and condition-number bounds for DP value functions.

The stage recursion of the gradient-Lipschitz constant (and, with the same
map, the strong-convexity modulus) is the Moebius iteration

    v <- v * y / (v + y) + x,     v_T = z,

with x the state-cost modulus, y the action-cost modulus and z the terminal
modulus. Its matrix [[x + y, x y], [1, y]] has eigenvalues
lambda_pm = (x + 2y +- r) / 2 with r = sqrt(x (x + 4y)), which gives the closed
form used by ``phi_closed_form``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BadModulus, PhiDisagreement, TooFewPoints
from .lft import DiscreteFn, discrete_gradients

# relative slack applied before flooring, so that exact ratios computed in
# floating point (e.g. 2*dx / (2*dx)) are not rounded down by one
FLOOR_RTOL = 1e-9
PHI_DIAGNOSTIC_RTOL = 1e-6


@dataclass(frozen=True)
class CurvatureReport:
    lipschitz: float
    grad_lipschitz: float
    strong_convexity: float
    condition_number: float

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["condition_number"]):
            d["condition_number"] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def estimate_curvature(f: DiscreteFn) -> CurvatureReport:
    """Second-difference surrogates for L, L', mu and kappa of a 1-D sample."""
    if f.grid.dim != 1:
        raise ValueError("estimate_curvature expects a 1-D function")
    if f.grid.size < 3:
        raise TooFewPoints("need at least three points")
    delta = float(f.grid.spacing[0])
    if delta <= 0:
        raise ValueError("grid spacing must be positive")
    c = discrete_gradients(f)
    second = np.diff(c) / delta
    L = float(np.max(np.abs(c)))
    Lp = float(np.max(second))
    mu = float(np.min(second))
    kappa = Lp / mu if mu > 0 else math.inf
    return CurvatureReport(L, max(Lp, 0.0), max(mu, 0.0), kappa)


def lipschitz_estimate(f: DiscreteFn) -> float:
    """Lipschitz constant of the piecewise-multilinear extension of f.

    Per axis the largest difference quotient is taken, extrapolated half a cell
    beyond the last one so that a smooth function's boundary slope is covered;
    the axes combine in the Euclidean norm.
    """
    total = 0.0
    vals = f.shaped
    for k in range(f.grid.dim):
        n = f.grid.points_per_axis[k]
        h = f.grid.spacing[k]
        if n < 2 or h == 0:
            continue
        c = np.diff(vals, axis=k) / h
        m = float(np.max(np.abs(c)))
        if n >= 3:
            first = np.take(c, 0, axis=k)
            last = np.take(c, -1, axis=k)
            m = max(
                m,
                float(np.max(np.abs(first - 0.5 * (np.take(c, 1, axis=k) - first)))),
                float(np.max(np.abs(last + 0.5 * (last - np.take(c, -2, axis=k))))),
            )
        total += m * m
    return math.sqrt(total)


def w_parameter(f: DiscreteFn, delta_s: float) -> int:
    """floor of the largest interior gradient jump divided by delta_s."""
    if delta_s <= 0:
        raise ValueError("delta_s must be positive")
    if f.grid.size < 3:
        raise TooFewPoints("need at least three points")
    c = discrete_gradients(f)
    jump = float(np.max(np.diff(c)))
    return max(0, int(math.floor(jump / delta_s * (1 + FLOOR_RTOL))))


@dataclass(frozen=True)
class PhiInputs:
    t: int
    T: int
    L_gx: float
    mu_gx: float
    L_gu: float
    mu_gu: float
    L_JT: float
    mu_JT: float

    def validate(self) -> None:
        if not 0 <= self.t <= self.T:
            raise ValueError("need 0 <= t <= T")
        for name in ("L_gx", "mu_gx", "L_gu", "mu_gu", "L_JT", "mu_JT"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise BadModulus(f"{name} must be positive and finite, got {v}")


def _moebius_closed(n: int, x: float, y: float, z: float) -> float:
    r = math.sqrt(x * (x + 4.0 * y))
    lam_p = 0.5 * (x + 2.0 * y + r)
    lam_m = 0.5 * (x + 2.0 * y - r)
    rho_n = (lam_m / lam_p) ** n
    nu1 = 1.0 + rho_n
    nu2 = 1.0 - rho_n
    num = r * z * nu1 + x * (2.0 * y + z) * nu2
    r_minus_x = 4.0 * x * y / (r + x)
    den = r_minus_x + 2.0 * z + rho_n * (r + x - 2.0 * z)
    return num / den


def _moebius_printed(t: int, T: int, x: float, y: float, z: float) -> float:
    r = math.sqrt(x * (x + 4.0 * y))
    a_p = -(x + 2.0 * y + r) / z**2
    a_m = -(x + 2.0 * y - r) / z**2
    nu1 = a_m**T * a_p**t + a_m**t * a_p**T
    nu2 = a_m**T * a_p**t - a_m**t * a_p**T
    return (r * z * nu1 + x * (2.0 * y + z) * nu2) / (r * z * nu1 + (x - 2.0 * z) * nu2)


def phi_recursive(p: PhiInputs) -> float:
    p.validate()
    L, mu = p.L_JT, p.mu_JT
    for _ in range(p.T - p.t):
        L = L * p.L_gu / (L + p.L_gu) + p.L_gx
        mu = mu * p.mu_gu / (mu + p.mu_gu) + p.mu_gx
    return L / mu


def phi_printed(p: PhiInputs) -> float:
    """The closed form exactly as typeset in the source derivation.

    Kept for diagnostics only: it does not solve the recursion (the
    denominator carries a spurious factor z and a flipped sign).
    """
    p.validate()
    return _moebius_printed(p.t, p.T, p.L_gx, p.L_gu, p.L_JT) / _moebius_printed(
        p.t, p.T, p.mu_gx, p.mu_gu, p.mu_JT
    )


def phi_closed_form(p: PhiInputs, check: bool = True) -> float:
    """Closed-form bound on the condition number of the stage-t value function."""
    p.validate()
    n = p.T - p.t
    phi = _moebius_closed(n, p.L_gx, p.L_gu, p.L_JT) / _moebius_closed(n, p.mu_gx, p.mu_gu, p.mu_JT)
    if check:
        ref = phi_recursive(p)
        if abs(phi - ref) > PHI_DIAGNOSTIC_RTOL * abs(ref):
            raise PhiDisagreement(f"closed form {phi!r} vs recursion {ref!r} for {p}")
    return phi


def gamma(p: PhiInputs) -> float:
    """phi at t = 0; the per-dimension base of the repetition bound."""
    q = PhiInputs(0, p.T, p.L_gx, p.mu_gx, p.L_gu, p.mu_gu, p.L_JT, p.mu_JT)
    return phi_closed_form(q)


def gamma_with_linear_state_cost(p: PhiInputs, mu_floor: float = 1e-9) -> float:
    """gamma when the state cost is linear (mu_gx = 0): use a small floor."""
    if p.mu_gx <= 0:
        warnings.warn("state cost has zero strong convexity; using a small floor", stacklevel=2)
        p = PhiInputs(p.t, p.T, max(p.L_gx, mu_floor), mu_floor, p.L_gu, p.mu_gu, p.L_JT, p.mu_JT)
    return gamma(p)
