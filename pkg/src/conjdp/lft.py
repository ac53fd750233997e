"""Discrete and continuous Legendre-Fenchel transforms.

The discrete transform of f on a grid X is f*(s) = max_{x in X} <s, x> - f(x).
``dlft_bruteforce`` evaluates it exhaustively and is the reference for
``dlft_fast``, which runs the exact 1-D kernel axis by axis.

Both routes accumulate the inner product in the same order, last axis first:
``acc = s[d-1]*x[d-1] - f`` and then ``acc = s[k]*x[k] + acc``. Rounding is
monotone, so the iterated maxima of the factorized route equal the joint maxima
bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._kernels import lft_batch
from .errors import NotConvex, TooFewPoints, Unbounded
from .grid import RegularGrid

CONVEXITY_RTOL = 1e-12
_BRUTE_CHUNK = 1 << 22


@dataclass(frozen=True, eq=False)
class DiscreteFn:
    """Values tabulated on a RegularGrid in row-major order."""

    grid: RegularGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float).ravel())
        if v.shape[0] != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: RegularGrid, fn) -> "DiscreteFn":
        return cls(grid, np.asarray(fn(grid.points()), dtype=float))

    @property
    def shaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __add__(self, other):
        if isinstance(other, DiscreteFn):
            if other.grid != self.grid:
                raise ValueError("grids differ")
            other = other.values
        return DiscreteFn(self.grid, self.values + other)

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteFn":
        return cls(RegularGrid.from_dict(d["grid"]), np.asarray(d["values"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "DiscreteFn":
        return cls.from_dict(json.loads(s))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["flat_index"] + [f"x{i}" for i in range(self.grid.dim)] + ["value"])
        for i, (p, v) in enumerate(zip(self.grid.points(), self.values)):
            w.writerow([i] + [repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()


@dataclass(frozen=True)
class DualGrid:
    """A RegularGrid over slope space."""

    grid: RegularGrid

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def dim(self) -> int:
        return self.grid.dim

    def points(self) -> np.ndarray:
        return self.grid.points()

    def axes(self) -> list:
        return self.grid.axes()


GridLike = Union[RegularGrid, DualGrid]


def _as_grid(g: GridLike) -> RegularGrid:
    return g.grid if isinstance(g, DualGrid) else g


def interpolate(f: DiscreteFn, points: np.ndarray, clamp: bool = True):
    """Multilinear interpolation of f at rows of ``points``.

    Points outside the box are clamped onto it; the Euclidean clamping distance
    is returned alongside the values so callers can flag infeasible queries.
    """
    g = f.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    clamped = np.clip(pts, g.lower, g.upper) if clamp else pts
    dist = np.linalg.norm(pts - clamped, axis=1)
    n = pts.shape[0]
    idx = []
    wts = []
    for k in range(g.dim):
        nk = g.points_per_axis[k]
        h = g.spacing[k]
        if nk == 1 or h == 0:
            idx.append(np.zeros(n, dtype=np.int64))
            wts.append(np.zeros(n))
            continue
        t = (clamped[:, k] - g.lower[k]) / h
        # a query on the top node keeps that node with weight zero
        i = np.clip(np.floor(t).astype(np.int64), 0, nk - 1)
        idx.append(i)
        wts.append(t - i)
    vals = f.shaped
    out = np.zeros(n)
    # axes on which every query sits on a node contribute a single corner
    active = [k for k in range(g.dim) if np.any(wts[k] != 0)]
    for bits in np.ndindex(*([2] * len(active))):
        corner = [0] * g.dim
        for k, b in zip(active, bits):
            corner[k] = b
        w = np.ones(n)
        ix = []
        for k, bit in enumerate(corner):
            if bit:
                w = w * wts[k]
                ix.append(np.minimum(idx[k] + 1, g.points_per_axis[k] - 1))
            else:
                w = w * (1.0 - wts[k])
                ix.append(idx[k])
        nz = w != 0
        if np.any(nz):
            out[nz] += w[nz] * vals[tuple(i[nz] for i in ix)]
    return out, dist


# ---------------------------------------------------------------- gradients


def discrete_gradients(f: DiscreteFn) -> np.ndarray:
    if f.grid.dim != 1:
        raise ValueError("discrete_gradients expects a 1-D function")
    if f.grid.size < 2:
        raise TooFewPoints("need at least two points for a gradient")
    x = f.grid.axis(0)
    if np.any(np.diff(x) <= 0):
        raise ValueError("grid must be strictly increasing")
    return np.diff(f.values) / np.diff(x)


def _nondecreasing(c: np.ndarray, axis: int = -1) -> bool:
    c = np.moveaxis(c, axis, -1)
    if c.shape[-1] < 2:
        return True
    prev = c[..., :-1]
    return bool(np.all(c[..., 1:] >= prev - CONVEXITY_RTOL * (1.0 + np.abs(prev))))


def axis_gradients(f: DiscreteFn, axis: int) -> Optional[np.ndarray]:
    """Difference quotients along one axis, or None for a degenerate axis."""
    g = f.grid
    if g.points_per_axis[axis] < 2 or g.spacing[axis] == 0:
        return None
    x = g.axis(axis)
    shape = [1] * g.dim
    shape[axis] = -1
    return np.diff(f.shaped, axis=axis) / np.diff(x).reshape(shape)


def is_axis_convex(f: DiscreteFn) -> bool:
    for k in range(f.grid.dim):
        c = axis_gradients(f, k)
        if c is not None and not _nondecreasing(c, axis=k):
            return False
    return True


def check_axis_convex(f: DiscreteFn) -> None:
    for k in range(f.grid.dim):
        c = axis_gradients(f, k)
        if c is not None and not _nondecreasing(c, axis=k):
            raise NotConvex(f"discrete gradients decrease along axis {k}")


# ---------------------------------------------------------------- dual grids


def canonical_dual_grid(f: DiscreteFn, K) -> DualGrid:
    """Uniform dual grid whose per-axis endpoints are the extreme gradients.

    In 1-D this is s_0 = c_0 and s_{K-1} = c_{N-2}. In d dimensions each axis
    spans the smallest and largest difference quotient found along that axis
    over all slices. ``K`` is an int or one count per axis.
    """
    d = f.grid.dim
    Ks = np.broadcast_to(np.atleast_1d(np.asarray(K, dtype=int)), (d,))
    if np.any(Ks < 1):
        raise ValueError("K must be positive")
    if d == 1:
        discrete_gradients(f)
    check_axis_convex(f)
    lo = np.zeros(d)
    hi = np.zeros(d)
    for k in range(d):
        c = axis_gradients(f, k)
        if c is None:
            Ks = Ks.copy()
            Ks[k] = 1
            continue
        if d == 1:
            lo[k], hi[k] = c[0], max(c[-1], c[0])
        else:
            lo[k], hi[k] = float(c.min()), float(c.max())
    return DualGrid(RegularGrid(lo, hi, Ks))


def covering_dual_grid(f: DiscreteFn, K) -> DualGrid:
    """Per-axis extreme gradients widened by one spacing unit on each side.

    With K points per axis the interior K-2 points span the gradient range, so
    the widened grid keeps a uniform spacing (hi - lo)/(K - 3).
    """
    d = f.grid.dim
    Ks = np.broadcast_to(np.atleast_1d(np.asarray(K, dtype=int)), (d,)).copy()
    lo = np.zeros(d)
    hi = np.zeros(d)
    for k in range(d):
        c = axis_gradients(f, k)
        if c is None:
            Ks[k] = 1
            continue
        a, b = float(c.min()), float(c.max())
        if Ks[k] >= 4 and b > a:
            step = (b - a) / (Ks[k] - 3)
            a, b = a - step, b + step
        elif b == a:
            Ks[k] = 1
        lo[k], hi[k] = a, b
    return DualGrid(RegularGrid(lo, hi, Ks))


# ---------------------------------------------------------------- transforms


def _brute_max(points: np.ndarray, fvals: np.ndarray, slopes: np.ndarray):
    """max over rows of ``points`` of <s, x> - f for every row s of ``slopes``."""
    n, d = points.shape
    k = slopes.shape[0]
    out = np.empty(k)
    arg = np.empty(k, dtype=np.int64)
    step = max(1, _BRUTE_CHUNK // max(n, 1))
    for a in range(0, k, step):
        S = slopes[a : a + step]
        acc = np.multiply.outer(S[:, d - 1], points[:, d - 1]) - fvals
        for ax in range(d - 2, -1, -1):
            acc = np.multiply.outer(S[:, ax], points[:, ax]) + acc
        idx = np.argmax(acc, axis=1)
        arg[a : a + step] = idx
        out[a : a + step] = acc[np.arange(len(S)), idx]
    return out, arg


def dlft_bruteforce(f: DiscreteFn, duals: GridLike):
    """Exhaustive discrete transform. Returns (DiscreteFn on duals, argmax)."""
    dg = _as_grid(duals)
    if dg.dim != f.grid.dim:
        raise ValueError("dual and primal dimensions differ")
    vals, arg = _brute_max(f.grid.points(), f.values, dg.points())
    return DiscreteFn(dg, vals), arg


def _lft_axis(ys: np.ndarray, x: np.ndarray, s: np.ndarray):
    """1-D transform of each row of ``ys`` (sampled at ``x``) at slopes ``s``.

    ``x`` may be degenerate (all equal); ``s`` may be in any order.
    """
    ys = np.ascontiguousarray(ys, dtype=float)
    if len(x) > 1 and x[0] == x[-1]:
        # repeated coordinate: only the smallest value can win
        first = np.argmin(ys, axis=1)
        ymin = ys[np.arange(ys.shape[0]), first]
        out, _ = lft_batch(x[:1].copy(), ymin[:, None].copy(), np.sort(s))
        arg = np.repeat(first[:, None], len(s), axis=1)
        order = np.argsort(s, kind="stable")
        res = np.empty_like(out)
        res[:, order] = out
        return res, arg
    if np.all(np.diff(s) >= 0):
        return lft_batch(np.ascontiguousarray(x, dtype=float), ys, np.ascontiguousarray(s, dtype=float))
    order = np.argsort(s, kind="stable")
    out, arg = lft_batch(np.ascontiguousarray(x, dtype=float), ys, np.ascontiguousarray(s[order]))
    res = np.empty_like(out)
    resa = np.empty_like(arg)
    res[:, order] = out
    resa[:, order] = arg
    return res, resa


def factorized_lft(values: np.ndarray, in_axes: Sequence[np.ndarray], out_axes: Sequence[np.ndarray]):
    """Transform a function on a product grid onto another product grid.

    Axes are processed from the last to the first so that, together with the
    smallest-index tie rule of each pass, the combined optimizer is the smallest
    row-major flat index whenever the per-axis optimizers are unique in value.
    Returns the transformed values (shape of ``out_axes``) and the flat primal
    optimizer for each output point.
    """
    d = len(in_axes)
    arr = np.asarray(values, dtype=float).reshape([len(a) for a in in_axes])
    args = [None] * d
    for k in range(d - 1, -1, -1):
        moved = np.moveaxis(arr, k, -1)
        lead = moved.shape[:-1]
        ys = moved.reshape(-1, moved.shape[-1])
        if k != d - 1:
            ys = -ys
        out, arg = _lft_axis(ys, np.asarray(in_axes[k], dtype=float), np.asarray(out_axes[k], dtype=float))
        arr = np.moveaxis(out.reshape(lead + (len(out_axes[k]),)), -1, k)
        args[k] = np.moveaxis(arg.reshape(lead + (len(out_axes[k]),)), -1, k)
    out_shape = tuple(len(a) for a in out_axes)
    J = np.indices(out_shape).reshape(d, -1)
    picked = []
    for k in range(d):
        index = tuple(picked) + tuple(J[j] for j in range(k, d))
        picked.append(args[k][index])
    flat = np.ravel_multi_index(tuple(picked), tuple(len(a) for a in in_axes))
    return arr.ravel(), flat


def dlft_fast(f: DiscreteFn, duals: GridLike, check_convex: bool = True):
    """Exact discrete transform via per-axis passes of the 1-D kernel."""
    dg = _as_grid(duals)
    if dg.dim != f.grid.dim:
        raise ValueError("dual and primal dimensions differ")
    if check_convex:
        check_axis_convex(f)
    for k in range(f.grid.dim):
        if f.grid.points_per_axis[k] > 1 and f.grid.spacing[k] < 0:
            raise ValueError("primal axes must be ascending")
    vals, flat = factorized_lft(f.values, f.grid.axes(), dg.axes())
    return DiscreteFn(dg, vals), flat


def conjugate_at(f: DiscreteFn, queries: np.ndarray, check_convex: bool = False):
    """max over the grid of f of <q, x> - f(x) at arbitrary query rows.

    One dimension uses the compiled scan; higher dimensions fall back to the
    exhaustive evaluation, which follows the same accumulation order.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[1] != f.grid.dim:
        raise ValueError("query dimension mismatch")
    if check_convex:
        check_axis_convex(f)
    if f.grid.dim == 1:
        out, arg = _lft_axis(f.values[None, :], f.grid.axis(0), q[:, 0])
        return out[0], arg[0]
    return _brute_max(f.grid.points(), f.values, q)


def biconjugate(f: DiscreteFn, duals: GridLike) -> DiscreteFn:
    """(f*)* sampled back on the primal grid."""
    fs, _ = dlft_fast(f, duals, check_convex=False)
    vals, _ = factorized_lft(fs.values, fs.grid.axes(), f.grid.axes())
    return DiscreteFn(f.grid, vals)


def lft_perturbation_gap(f: DiscreteFn, g: DiscreteFn, duals: GridLike) -> float:
    if f.grid != g.grid:
        raise ValueError("f and g must share a grid")
    fs, _ = dlft_fast(f, duals, check_convex=False)
    gs, _ = dlft_fast(g, duals, check_convex=False)
    return float(np.max(np.abs(fs.values - gs.values)))


# ---------------------------------------------------------------- closed forms


@dataclass(frozen=True)
class QuadraticDescriptor:
    """q(u) = sum_i a_i u_i^2 / 2 + <b, u> + c over the box [lower, upper].

    ``a`` and ``b`` broadcast per coordinate; infinite bounds mark unbounded axes.
    """

    a: np.ndarray
    b: np.ndarray
    c: float
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, a, b=0.0, c=0.0, lower=-np.inf, upper=np.inf, dim: Optional[int] = None):
        arrs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (a, b, lower, upper)]
        n = dim if dim is not None else max(len(v) for v in arrs)
        a_, b_, lo, hi = (np.broadcast_to(v, (n,)).copy() for v in arrs)
        if np.any(a_ < 0):
            raise ValueError("curvature a must be nonnegative")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        object.__setattr__(self, "a", a_)
        object.__setattr__(self, "b", b_)
        object.__setattr__(self, "c", float(c))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.a)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return 0.5 * np.sum(self.a * u * u, axis=-1) + np.sum(self.b * u, axis=-1) + self.c

    def maximizer(self, s) -> np.ndarray:
        """argmax over the box of <s,u> - q(u), coordinate-wise."""
        s = np.asarray(s, dtype=float)
        g = s - self.b
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(self.a > 0, g / np.where(self.a > 0, self.a, 1.0), 0.0)
        flat = self.a == 0
        if np.any(flat):
            bad = flat & (((g > 0) & np.isinf(self.upper)) | ((g < 0) & np.isinf(self.lower)))
            if np.any(bad):
                raise Unbounded("linear descriptor on an unbounded axis")
            edge = np.where(g > 0, self.upper, np.where(g < 0, self.lower, np.clip(0.0, self.lower, self.upper)))
            u = np.where(flat, edge, u)
        return np.clip(u, self.lower, self.upper)

    def conjugate(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        u = self.maximizer(s)
        return np.sum(s * u, axis=-1) - self(u)


def clft_quadratic(q: QuadraticDescriptor, s) -> Union[float, np.ndarray]:
    """sup over the box of <s,u> - q(u), by clamping (s - b)/a per coordinate."""
    out = q.conjugate(s)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- estimator


class LegendreTransformer(TransformerMixin, BaseEstimator):
    """Discrete Legendre-Fenchel transform as a fitted transformer.

    ``fit(X, y)`` stores a function sampled at points ``X`` (rows) with values
    ``y``. ``transform(S)`` returns the conjugate at slope rows ``S``.
    ``transform_argmax`` returns the maximizing sample index (smallest on ties).
    """

    def __init__(self, check_convex: bool = False):
        self.check_convex = check_convex

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=1)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0] or not np.all(np.isfinite(y)):
            raise ValueError("y must be finite with one value per sample")
        if self.check_convex and X.shape[1] == 1:
            order = np.argsort(X[:, 0], kind="stable")
            xs = X[order, 0]
            if np.any(np.diff(xs) <= 0):
                raise ValueError("sample points must be distinct")
            c = np.diff(y[order]) / np.diff(xs)
            if not _nondecreasing(c):
                raise NotConvex("samples are not convex")
        self.points_ = X
        self.values_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def _eval(self, S):
        check_is_fitted(self, "points_")
        S = check_array(S)
        if S.shape[1] != self.n_features_in_:
            raise ValueError("slope dimension mismatch")
        if self.n_features_in_ == 1:
            xs = self.points_[:, 0]
            if np.all(np.diff(xs) > 0):
                out, arg = _lft_axis(self.values_[None, :], xs, S[:, 0])
                return out[0], arg[0]
        return _brute_max(self.points_, self.values_, S)

    def transform(self, S):
        return self._eval(S)[0]

    def transform_argmax(self, S):
        return self._eval(S)[1]
