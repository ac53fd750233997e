"""Cost descriptors with values, conjugates and linear-tilt minimizers.

Every descriptor acts on row-stacked points of shape (n, dim). ``conjugate``
returns sup_u <s,u> - g(u) over the descriptor's box and ``argmin_linear``
returns argmin_u g(u) + <u, v>, which is how policies are read off a dual
optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NoConjugate, NotConvex, Unbounded
from .grid import RegularGrid
from .lft import DiscreteFn, QuadraticDescriptor, _brute_max, interpolate


def _rows(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, dim) if x.ndim <= 1 else x


class Cost:
    kind = "abstract"
    dim: int

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def conjugate(self, s) -> np.ndarray:
        raise NoConjugate(f"{self.kind} cost has no conjugate")

    def argmin_linear(self, v) -> np.ndarray:
        raise NoConjugate(f"{self.kind} cost has no tilted minimizer")

    def moduli(self) -> Optional[tuple]:
        """(L', mu) if known analytically."""
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


class QuadraticCost(Cost):
    """sum_i a_i u_i^2/2 + <b,u> + c on the box [lower, upper]."""

    kind = "quadratic"

    def __init__(self, a, b=0.0, c=0.0, lower=-np.inf, upper=np.inf, dim=None):
        q = QuadraticDescriptor(a, b, c, lower, upper, dim=dim)
        self._q = q
        self.a, self.b, self.c, self.lower, self.upper = q.a, q.b, q.c, q.lower, q.upper

    def __repr__(self):
        return f"QuadraticCost(a={self.a.tolist()}, b={self.b.tolist()}, c={self.c})"

    @property
    def dim(self) -> int:
        return len(self.a)

    @property
    def descriptor(self) -> QuadraticDescriptor:
        return self._q

    def __call__(self, x):
        return self._q(_rows(x, self.dim))

    def conjugate(self, s):
        return self._q.conjugate(_rows(s, self.dim))

    def argmin_linear(self, v):
        return self._q.maximizer(-_rows(v, self.dim))

    def moduli(self):
        return float(np.max(self.a)), float(np.min(self.a))

    def to_dict(self):
        return {
            "kind": "quadratic",
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c,
            "lower": [None if np.isinf(v) else float(v) for v in self.lower],
            "upper": [None if np.isinf(v) else float(v) for v in self.upper],
        }


@dataclass(frozen=True)
class PiecewiseLinearCost(Cost):
    """Separable sum over coordinates of one convex piecewise-linear phi.

    phi(t) = slopes[0] t + sum_k (slopes[k+1] - slopes[k]) max(0, t - knots[k]),
    plus ``offset`` once. Slopes must be nondecreasing and knots increasing.
    """

    knots: np.ndarray
    slopes: np.ndarray
    offset: float = 0.0
    dim: int = 1
    lower: float = -np.inf
    upper: float = np.inf
    kind = "piecewise_linear"

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.knots, dtype=float))
        s = np.atleast_1d(np.asarray(self.slopes, dtype=float))
        if len(s) != len(k) + 1:
            raise ValueError("need one more slope than knots")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be increasing")
        if np.any(np.diff(s) < 0):
            raise NotConvex("slopes must be nondecreasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "slopes", s)

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        out = self.slopes[0] * t
        for j, kn in enumerate(self.knots):
            out = out + (self.slopes[j + 1] - self.slopes[j]) * np.maximum(0.0, t - kn)
        return out

    def __call__(self, x):
        return np.sum(self.phi(_rows(x, self.dim)), axis=1) + self.offset

    def _candidates(self):
        pts = [p for p in self.knots if self.lower <= p <= self.upper]
        if np.isfinite(self.lower):
            pts.insert(0, self.lower)
        if np.isfinite(self.upper):
            pts.append(self.upper)
        if not pts:
            pts = [0.0]
        return np.array(sorted(set(pts)))

    def _sup_1d(self, s):
        # sup_t s t - phi(t) over [lower, upper]
        s = np.asarray(s, dtype=float)
        if (np.isinf(self.upper) and np.any(s > self.slopes[-1])) or (
            np.isinf(self.lower) and np.any(s < self.slopes[0])
        ):
            raise Unbounded("slope outside the range of a piecewise-linear cost")
        cand = self._candidates()
        vals = s[..., None] * cand - self.phi(cand)
        i = np.argmax(vals, axis=-1)
        return np.take_along_axis(vals, i[..., None], -1)[..., 0], cand[i]

    def conjugate(self, s):
        v, _ = self._sup_1d(_rows(s, self.dim))
        return np.sum(v, axis=1) - self.offset

    def argmin_linear(self, v):
        _, u = self._sup_1d(-_rows(v, self.dim))
        return u

    def moduli(self):
        return None

    def to_dict(self):
        return {
            "kind": "piecewise_linear",
            "knots": self.knots.tolist(),
            "slopes": self.slopes.tolist(),
            "offset": self.offset,
            "dim": self.dim,
            "lower": None if np.isinf(self.lower) else self.lower,
            "upper": None if np.isinf(self.upper) else self.upper,
        }


@dataclass(frozen=True)
class TabulatedCost(Cost):
    """Values on a grid, evaluated by multilinear interpolation.

    The conjugate is the discrete transform of the table, i.e. of its convex
    envelope. ``integer_axes`` marks axes whose coordinates are integer
    decisions; the tilted minimizer enumerates those and runs a bounded scalar
    search on a single continuous axis.
    """

    table: DiscreteFn
    integer_axes: tuple = ()
    kind = "tabulated"

    @property
    def dim(self) -> int:
        return self.table.grid.dim

    def __call__(self, x):
        return interpolate(self.table, _rows(x, self.dim))[0]

    def conjugate(self, s):
        return _brute_max(self.table.grid.points(), self.table.values, _rows(s, self.dim))[0]

    def argmin_linear(self, v):
        v = _rows(v, self.dim)
        pts = self.table.grid.points()
        tilt = self.table.values[None, :] + v @ pts.T
        best = pts[np.argmin(tilt, axis=1)].copy()
        cont = [k for k in range(self.dim) if k not in self.integer_axes and self.table.grid.spacing[k] > 0]
        if len(cont) != 1:
            return best
        k = cont[0]
        lo, hi = self.table.grid.lower[k], self.table.grid.upper[k]
        for r in range(len(v)):
            base = best[r].copy()

            def obj(t, base=base, r=r):
                base[k] = t
                return float(self(base[None, :])[0] + v[r] @ base)

            res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
            if res.fun <= obj(best[r][k]):
                best[r][k] = res.x
        return best

    def to_dict(self):
        return {"kind": "tabulated", "table": self.table.to_dict(), "integer_axes": list(self.integer_axes)}


@dataclass(frozen=True)
class MaxAbsCost(Cost):
    """max_i |x_i - alpha_i|."""

    alpha: np.ndarray
    kind = "max_abs"

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=float)))

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def __call__(self, x):
        return np.max(np.abs(_rows(x, self.dim) - self.alpha), axis=1)

    def to_dict(self):
        return {"kind": "max_abs", "alpha": self.alpha.tolist()}


@dataclass(frozen=True)
class SumCost(Cost):
    """Pointwise sum of descriptors on the same space (values only)."""

    parts: tuple = field(default_factory=tuple)
    kind = "sum"

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def __call__(self, x):
        return sum(p(x) for p in self.parts)

    def to_dict(self):
        return {"kind": "sum", "parts": [p.to_dict() for p in self.parts]}


def zero_cost(dim: int) -> QuadraticCost:
    return QuadraticCost(np.zeros(dim), 0.0, 0.0, dim=dim)


def _bound(v, default):
    if v is None:
        return default
    return np.asarray([default if e is None else e for e in v], dtype=float) if isinstance(v, list) else float(v)


def cost_from_dict(d: dict) -> Cost:
    kind = d["kind"]
    if kind == "quadratic":
        return QuadraticCost(d["a"], d.get("b", 0.0), d.get("c", 0.0), _bound(d.get("lower"), -np.inf), _bound(d.get("upper"), np.inf))
    if kind == "piecewise_linear":
        return PiecewiseLinearCost(
            d["knots"], d["slopes"], d.get("offset", 0.0), int(d.get("dim", 1)),
            _bound(d.get("lower"), -np.inf), _bound(d.get("upper"), np.inf),
        )
    if kind == "tabulated":
        return TabulatedCost(DiscreteFn.from_dict(d["table"]), tuple(d.get("integer_axes", ())))
    if kind == "max_abs":
        return MaxAbsCost(d["alpha"])
    if kind == "sum":
        return SumCost(tuple(cost_from_dict(p) for p in d["parts"]))
    raise ValueError(f"unknown cost kind {kind!r}")


def tabulate(cost: Cost, grid: RegularGrid) -> DiscreteFn:
    return DiscreteFn(grid, cost(grid.points()))


def average_costs(costs: Sequence[QuadraticCost], probs: Sequence[float]) -> QuadraticCost:
    """Expectation of quadratic descriptors sharing a box (noise-dependent g_u)."""
    p = np.asarray(probs, dtype=float)
    a = sum(pi * c.a for pi, c in zip(p, costs))
    b = sum(pi * c.b for pi, c in zip(p, costs))
    c0 = sum(pi * c.c for pi, c in zip(p, costs))
    return QuadraticCost(a, b, c0, costs[0].lower, costs[0].upper)
