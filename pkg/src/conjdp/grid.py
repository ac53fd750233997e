"""Regular axis-aligned grids over boxes, and mixed continuous/integer spaces."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_EXACT_INT = 2.0**53


def _as_vec(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class RegularGrid:
    """Uniform grid on the box [lower, upper] with row-major enumeration.

    A single-point axis must have lower == upper. Axes with several points and
    lower == upper are allowed and have spacing 0 (a degenerate, repeated
    coordinate), which is how a single-slope dual grid is represented.
    """

    lower: np.ndarray
    upper: np.ndarray
    points_per_axis: tuple
    spacing: np.ndarray = field(init=False)

    def __init__(self, lower, upper, points_per_axis):
        lo = _as_vec(lower, "lower")
        hi = _as_vec(upper, "upper")
        n = tuple(int(k) for k in np.atleast_1d(points_per_axis))
        if not (len(lo) == len(hi) == len(n)) or len(n) == 0:
            raise ValueError("lower, upper and points_per_axis must share a positive length")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        if any(k < 1 for k in n):
            raise ValueError("points_per_axis must be positive")
        for i, k in enumerate(n):
            if k == 1 and lo[i] != hi[i]:
                raise ValueError(f"axis {i} has one point but lower != upper")
        sp = np.array([(hi[i] - lo[i]) / (k - 1) if k > 1 else 0.0 for i, k in enumerate(n)])
        lo.setflags(write=False)
        hi.setflags(write=False)
        sp.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points_per_axis", n)
        object.__setattr__(self, "spacing", sp)

    @classmethod
    def from_axes(cls, lower, upper, n) -> "RegularGrid":
        return cls(lower, upper, n)

    @classmethod
    def uniform_1d(cls, lower: float, upper: float, n: int) -> "RegularGrid":
        return cls([lower], [upper], [n])

    @property
    def dim(self) -> int:
        return len(self.points_per_axis)

    @property
    def shape(self) -> tuple:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    def axis(self, i: int) -> np.ndarray:
        k = self.points_per_axis[i]
        if k == 1:
            return np.array([self.lower[i]])
        # lower + j*spacing keeps the lattice exact for dyadic inputs; pin the end
        out = self.lower[i] + np.arange(k) * self.spacing[i]
        out[-1] = self.upper[i]
        return out

    def axes(self) -> list:
        return [self.axis(i) for i in range(self.dim)]

    def points(self) -> np.ndarray:
        """All grid points as an (N, d) array in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def linearize(self, multi_index: Sequence[int]) -> int:
        return linearize(self, multi_index)

    def delinearize(self, flat: int) -> tuple:
        return delinearize(self, flat)

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def hausdorff_to_box(self) -> float:
        return hausdorff_to_box(self)

    def diameter(self) -> float:
        return diameter(self)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
            "points_per_axis": list(self.points_per_axis),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegularGrid":
        g = cls(d["lower"], d["upper"], d["points_per_axis"])
        if "dim" in d and int(d["dim"]) != g.dim:
            raise ValueError("dim does not match the axis data")
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "RegularGrid":
        return cls.from_dict(json.loads(s))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RegularGrid):
            return NotImplemented
        return (
            self.points_per_axis == other.points_per_axis
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self) -> int:
        return hash((self.points_per_axis, self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self) -> str:
        return (
            f"RegularGrid(lower={self.lower.tolist()}, upper={self.upper.tolist()}, "
            f"points_per_axis={list(self.points_per_axis)})"
        )


def linearize(grid: RegularGrid, multi_index: Sequence[int]) -> int:
    idx = tuple(int(i) for i in np.atleast_1d(multi_index))
    if len(idx) != grid.dim:
        raise IndexError(f"expected {grid.dim} indices, got {len(idx)}")
    for i, (j, k) in enumerate(zip(idx, grid.points_per_axis)):
        if not 0 <= j < k:
            raise IndexError(f"index {j} out of range [0, {k}) on axis {i}")
    return int(np.ravel_multi_index(idx, grid.points_per_axis))


def delinearize(grid: RegularGrid, flat: int) -> tuple:
    flat = int(flat)
    if not 0 <= flat < grid.size:
        raise IndexError(f"flat index {flat} out of range [0, {grid.size})")
    return tuple(int(v) for v in np.unravel_index(flat, grid.points_per_axis))


def hausdorff_to_box(grid: RegularGrid) -> float:
    """Largest distance from a box point to its nearest grid point."""
    return 0.5 * float(np.linalg.norm(grid.spacing))


def diameter(grid: RegularGrid) -> float:
    """max(largest pairwise distance, largest point norm).

    Both maxima of a convex function over a box are attained at corners, and the
    box corners are grid points, so only corners need checking.
    """
    span = float(np.linalg.norm(grid.upper - grid.lower))
    corners = np.array(list(itertools.product(*zip(grid.lower, grid.upper))))
    return max(span, float(np.max(np.linalg.norm(corners, axis=1))))


@dataclass(frozen=True)
class MixedSpace:
    """Product of a discretized continuous block and an integer block.

    The continuous coordinates come first in the combined grid.
    """

    continuous: Optional[RegularGrid] = None
    integer: Optional[RegularGrid] = None

    def __post_init__(self):
        if self.continuous is None and self.integer is None:
            raise ValueError("a MixedSpace needs at least one block")
        if self.integer is not None:
            g = self.integer
            for arr in (g.lower, g.upper, g.spacing):
                if np.any(np.abs(arr) >= _EXACT_INT):
                    raise ValueError("integer block exceeds exactly representable range")
                if np.any(arr != np.round(arr)):
                    raise ValueError("integer block must have integer bounds and spacing")

    @property
    def d_r(self) -> int:
        return 0 if self.continuous is None else self.continuous.dim

    @property
    def d_i(self) -> int:
        return 0 if self.integer is None else self.integer.dim

    @property
    def dim(self) -> int:
        return self.d_r + self.d_i

    @property
    def grid(self) -> RegularGrid:
        blocks = [b for b in (self.continuous, self.integer) if b is not None]
        if len(blocks) == 1:
            return blocks[0]
        return RegularGrid(
            np.concatenate([b.lower for b in blocks]),
            np.concatenate([b.upper for b in blocks]),
            sum((b.points_per_axis for b in blocks), ()),
        )

    def continuous_hausdorff(self) -> float:
        return 0.0 if self.continuous is None else hausdorff_to_box(self.continuous)

    @classmethod
    def box(cls, lower, upper, n) -> "MixedSpace":
        return cls(continuous=RegularGrid(lower, upper, n))

    def to_dict(self) -> dict:
        return {
            "continuous": None if self.continuous is None else self.continuous.to_dict(),
            "integer": None if self.integer is None else self.integer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixedSpace":
        if "lower" in d:
            return cls(continuous=RegularGrid.from_dict(d))
        c = d.get("continuous")
        i = d.get("integer")
        return cls(
            continuous=None if c is None else RegularGrid.from_dict(c),
            integer=None if i is None else RegularGrid.from_dict(i),
        )
