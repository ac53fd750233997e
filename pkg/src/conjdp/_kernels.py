"""Compiled 1-D discrete Legendre-Fenchel kernel.

For every slice y of a batch the kernel returns, for each slope s in an
ascending list, max_i (s * x_i - y_i) and the smallest maximizing index. The
answer is exact (bit-identical to exhaustive search) for arbitrary inputs:

* points lying above the lower convex hull by more than a rounding margin can
  never win and are dropped;
* for each slope the remaining hull is cut down to a band of candidates whose
  neighbouring hull slopes are within a margin of s; outside the band the
  objective is strictly monotone by more than the rounding error;
* the band ends move monotonically with s, so a batch costs O(n + K) per slice
  unless many slopes fall inside a flat (affine) stretch.
"""

import numpy as np
from numba import njit, prange

_EPS = np.finfo(np.float64).eps
_MARGIN = 64.0


@njit(cache=True)
def _lft_slice(x, y, s, out, arg, hull, sig, pmax, smin):
    n = x.shape[0]
    k = s.shape[0]
    if n == 1:
        for j in range(k):
            out[j] = s[j] * x[0] - y[0]
            arg[j] = 0
        return

    xmax = 0.0
    ymax = 0.0
    for i in range(n):
        ax = abs(x[i])
        ay = abs(y[i])
        if ax > xmax:
            xmax = ax
        if ay > ymax:
            ymax = ay
    smax = 0.0
    for j in range(k):
        a = abs(s[j])
        if a > smax:
            smax = a
    tolv = _MARGIN * _EPS * (smax * xmax + ymax) + 1e-300
    dxmin = np.inf
    for i in range(n - 1):
        d = x[i + 1] - x[i]
        if d < dxmin:
            dxmin = d

    # lower hull, keeping points within tolv of it
    h = 0
    for i in range(n):
        while h >= 2:
            i0 = hull[h - 2]
            i1 = hull[h - 1]
            chord = y[i0] + (y[i] - y[i0]) * ((x[i1] - x[i0]) / (x[i] - x[i0]))
            if y[i1] - chord > tolv:
                h -= 1
            else:
                break
        hull[h] = i
        h += 1

    for v in range(h - 1):
        a = hull[v]
        b = hull[v + 1]
        sig[v] = (y[b] - y[a]) / (x[b] - x[a])
    run = -np.inf
    for v in range(h - 1):
        if sig[v] > run:
            run = sig[v]
        pmax[v] = run
    run = np.inf
    for v in range(h - 2, -1, -1):
        if sig[v] < run:
            run = sig[v]
        smin[v] = run

    # slope error of one hull edge is bounded by ~eps*(|y|)/dx; widen generously
    tols = tolv / dxmin
    for v in range(h - 1):
        a = abs(sig[v]) * _MARGIN * _EPS
        if a > tols:
            tols = a

    lo = 0
    hi = 0
    for j in range(k):
        sj = s[j]
        while lo < h - 1 and pmax[lo] < sj - tols:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < h - 1 and smin[hi] <= sj + tols:
            hi += 1
        best = -np.inf
        bi = -1
        for v in range(lo, hi + 1):
            i = hull[v]
            val = sj * x[i] - y[i]
            if val > best:
                best = val
                bi = i
        out[j] = best
        arg[j] = bi


@njit(cache=True, parallel=True)
def lft_batch(x, ys, s):
    """Rows of ``ys`` are slices sampled at the strictly increasing ``x``;
    ``s`` must be ascending (duplicates allowed)."""
    m = ys.shape[0]
    n = x.shape[0]
    k = s.shape[0]
    out = np.empty((m, k))
    arg = np.empty((m, k), dtype=np.int64)
    for r in prange(m):
        hull = np.empty(n, dtype=np.int64)
        sig = np.empty(max(n - 1, 1))
        pmax = np.empty(max(n - 1, 1))
        smin = np.empty(max(n - 1, 1))
        _lft_slice(x, ys[r], s, out[r], arg[r], hull, sig, pmax, smin)
    return out, arg
