import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_convex_fn(rng, grid_cls, fn_cls, d=1, n=None, lo=-1.0, hi=1.0):
    """Separable convex sum of random per-axis convex sequences (integer-free floats)."""
    n = n or [int(rng.integers(2, 40)) for _ in range(d)]
    grid = grid_cls([lo] * d, [hi] * d, n)
    total = np.zeros(grid.shape)
    for k in range(d):
        steps = np.sort(rng.normal(size=n[k] - 1))
        vals = np.concatenate([[0.0], np.cumsum(steps)])
        shape = [1] * d
        shape[k] = n[k]
        total = total + vals.reshape(shape)
    return fn_cls(grid, total.ravel())


def lattice_convex_fn(rng, d=1, n=None, max_points=4096):
    """Separable convex function whose per-axis gradients lie on h * Z.

    With such gradients a uniform dual grid from the smallest to the largest
    gradient (spacing h) contains every subdifferential endpoint, so the
    biconjugate reproduces the function exactly.
    """
    from conjdp.grid import RegularGrid
    from conjdp.lft import DiscreteFn

    if n is None:
        cap = int(round(max_points ** (1.0 / d)))
        n = [int(rng.integers(2, max(3, cap) + 1)) for _ in range(d)]
    dx = [float(2.0 ** rng.integers(-6, 1)) for _ in range(d)]
    lo = [float(rng.integers(-4, 5)) * dx[k] for k in range(d)]
    grid = RegularGrid(lo, [lo[k] + dx[k] * (n[k] - 1) for k in range(d)], n)
    h = float(2.0 ** rng.integers(-3, 2))
    total = np.zeros(grid.shape)
    for k in range(d):
        start = int(rng.integers(-20, 21))
        jumps = rng.integers(0, 4, size=n[k] - 2) if n[k] > 2 else np.zeros(0, int)
        grads = h * (start + np.concatenate([[0], np.cumsum(jumps)]))
        vals = np.concatenate([[0.0], np.cumsum(grads * dx[k])])
        shape = [1] * d
        shape[k] = n[k]
        total = total + vals.reshape(shape)
    return DiscreteFn(grid, total.ravel()), h
