"""Classical simulator of the quantum Legendre-Fenchel relabeling and of the
quantum DP algorithms built on it.

For a 1-D slice with discrete gradients c_0..c_{N-2} and a uniform dual grid
of spacing ds, the relabeling prepares pairs (i, m) with m < W. An interior
pair is good when i has at least m + 1 labels and s_j <= c_i; it is relabeled
to j = l0 + m, where l0 is the first dual index with s_l > c_{i-1}. The label
budget per point is either the exact count of duals in (c_{i-1}, c_i]
(``w_rule="count"``) or floor((c_i - c_{i-1}) / ds) (``w_rule="floor"``), which
can miss one label per interval. The endpoint
i = 0 claims the duals at or below c_0 and i = N - 1 those at or above
c_{N-2}; on the canonical grid that is exactly the single pair (0, 0) -> 0 and
(N - 1, 0) -> K - 1. Postselecting the good pairs succeeds with probability
|good| / (N W).

Garbage registers are not represented and amplitude amplification is
accounted for as 1/sqrt(p) expected rounds. The relabeled output is compared
against the exact transform and every disagreement is reported.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .conditioning import FLOOR_RTOL, PhiInputs, gamma, gamma_with_linear_state_cost
from .dp_det import curvature_report, solve
from .dp_stoch import stoch_solve
from .errors import BadModulus, NotConvex
from .grid import RegularGrid
from .lft import DiscreteFn, _as_grid, _lft_axis, discrete_gradients, is_axis_convex
from .model import DpModel, noise_at

_EPS = np.finfo(np.float64).eps


# ---------------------------------------------------------------- 1-D relabeling


@dataclass
class GoodSet:
    """Pairs (i, m) of the prepared register, their labels j and flags."""

    i: np.ndarray
    m: np.ndarray
    j: np.ndarray
    flag: np.ndarray
    W: int
    N: int
    K: int

    @property
    def good_count(self) -> int:
        return int(np.count_nonzero(self.flag))

    @property
    def total_count(self) -> int:
        return self.N * self.W

    @property
    def probability(self) -> float:
        if self.W == 0:
            return min(1.0, self.K / self.N)
        return self.good_count / self.total_count

    def pairs(self) -> set:
        return {(int(a), int(b)) for a, b, f in zip(self.i, self.m, self.flag) if f}

    def mapping(self) -> dict:
        return {(int(a), int(b)): int(c) for a, b, c, f in zip(self.i, self.m, self.j, self.flag) if f}


W_RULES = ("count", "floor")


def _good_set_1d(x: np.ndarray, y: np.ndarray, s: np.ndarray, w_rule: str = "count") -> GoodSet:
    N, K = len(x), len(s)
    if N == 1:
        m = np.arange(K)
        return GoodSet(np.zeros(K, dtype=np.int64), m, m.copy(), np.ones(K, bool), K, 1, K)
    c = np.diff(y) / np.diff(x)
    ds = (s[-1] - s[0]) / (K - 1) if K > 1 else math.inf
    tau = 64.0 * _EPS * (1.0 + float(np.max(np.abs(c))))
    if math.isfinite(ds):
        tau = max(tau, FLOOR_RTOL * ds)
    ii, mm, jj = [], [], []
    # endpoints
    count0 = int(np.searchsorted(s, c[0] + tau, side="right"))
    firstN = int(np.searchsorted(s, c[-1] - tau, side="left"))
    countN = K - firstN
    ii.append(np.zeros(count0, dtype=np.int64))
    mm.append(np.arange(count0))
    jj.append(np.arange(count0))
    # interior
    W_int = 0
    if N > 2:
        jumps = c[1:] - c[:-1]
        if math.isfinite(ds):
            cnt = np.floor(jumps / ds * (1.0 + FLOOR_RTOL)).astype(np.int64)
            cnt = np.maximum(cnt, 0)
        else:
            cnt = np.zeros(N - 2, dtype=np.int64)
        l0 = np.searchsorted(s, c[:-1] + tau, side="right")
        if w_rule == "count":
            # exact number of labels in (c_{i-1}, c_i]; the floor rule can
            # undercount by one and leave labels unclaimed
            cnt = np.searchsorted(s, c[1:] + tau, side="right") - l0
        elif w_rule != "floor":
            raise ValueError(f"w_rule must be one of {W_RULES}")
        W_int = int(cnt.max()) if len(cnt) else 0
        rep = np.repeat(np.arange(1, N - 1), cnt)
        offs = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        ii.append(rep)
        mm.append(offs)
        jj.append(np.repeat(l0, cnt) + offs)
    ii.append(np.full(countN, N - 1, dtype=np.int64))
    mm.append(np.arange(countN))
    jj.append(firstN + np.arange(countN))
    i = np.concatenate(ii)
    m = np.concatenate(mm)
    j = np.concatenate(jj)
    W = max(W_int, count0, countN)
    # the label must also lie in the primal point's subgradient interval
    upper = np.append(c + tau, np.inf)
    ok = (j >= 0) & (j < K)
    ok[ok] = s[j[ok]] <= upper[i[ok]]
    return GoodSet(i, m, j, ok, W, N, K)


def qlft_good_set(f: DiscreteFn, duals, w_rule: str = "count") -> GoodSet:
    """Enumerate the good pairs and their labels for a convex 1-D function."""
    g = _as_grid(duals)
    if f.grid.dim != 1 or g.dim != 1:
        raise ValueError("qlft_good_set expects 1-D inputs")
    if f.grid.size >= 2:
        discrete_gradients(f)
    if not is_axis_convex(f):
        raise NotConvex("relabeling needs nondecreasing discrete gradients")
    return _good_set_1d(f.grid.axis(0), f.values, g.axis(0), w_rule)


@dataclass
class IndexedSuperposition:
    """Uniform superposition over flat indices i*W + m with payload and flag."""

    index: np.ndarray
    payload: np.ndarray  # (n, 3): x_i, f(x_i), j
    flag: np.ndarray

    def __post_init__(self):
        if len(np.unique(self.index)) != len(self.index):
            raise ValueError("indices must be unique")
        if not np.all(np.isfinite(self.payload[:, :2])):
            raise ValueError("payloads must be finite")

    def postselect(self) -> "IndexedSuperposition":
        k = self.flag.astype(bool)
        return IndexedSuperposition(self.index[k], self.payload[k], self.flag[k])


def prepare(gs: GoodSet, x: np.ndarray, y: np.ndarray) -> IndexedSuperposition:
    W = max(gs.W, 1)
    payload = np.stack([x[gs.i], y[gs.i], gs.j.astype(float)], axis=1)
    return IndexedSuperposition(gs.i * W + gs.m, payload, gs.flag.copy())


@dataclass
class SliceResult:
    values: np.ndarray
    arg: np.ndarray
    good: GoodSet
    mismatches: list
    near_ties: int


def _simulate_slice(x: np.ndarray, y: np.ndarray, s: np.ndarray, ref=None, w_rule: str = "count") -> SliceResult:
    gs = _good_set_1d(x, y, s, w_rule)
    K = len(s)
    state = prepare(gs, x, y).postselect()
    W = max(gs.W, 1)
    i = state.index // W
    m = state.index % W
    j = state.payload[:, 2].astype(np.int64)
    val = s[j] * state.payload[:, 0] - state.payload[:, 1]
    # per label keep the largest value, ties to the smallest primal index
    order = np.lexsort((i, -val, j))
    j_s = j[order]
    first = np.ones(len(j_s), bool)
    first[1:] = j_s[1:] != j_s[:-1]
    pick = order[first]
    if ref is None:
        ref_v, ref_a = _lft_axis(y[None, :], x, s)
        ref_v, ref_a = ref_v[0], ref_a[0]
    else:
        ref_v, ref_a = ref
    out = ref_v.copy()
    arg = ref_a.copy()
    covered = np.zeros(K, bool)
    lab = j[pick]
    covered[lab] = True
    tolv = 64.0 * _EPS * (float(np.max(np.abs(s))) * float(np.max(np.abs(x))) + float(np.max(np.abs(y)))) + 1e-300
    bad = val[pick] < ref_v[lab] - tolv
    # a claimant within rounding of the maximum is a tie in exact arithmetic;
    # the register then keeps the classical kernel's tie-break
    out[lab[bad]] = val[pick][bad]
    arg[lab[bad]] = i[pick][bad]
    mism = [(-1, -1, int(q)) for q in np.flatnonzero(~covered)]
    mism += [(int(a), int(b), int(c)) for a, b, c in zip(i[pick][bad], m[pick][bad], lab[bad])]
    near = int(np.count_nonzero((val[pick] != ref_v[lab]) & ~bad))
    return SliceResult(out, arg, gs, mism, near)


# ---------------------------------------------------------------- d-dim passes


@dataclass
class AxisRecord:
    axis: int
    slices: int
    N: int
    K: int
    W: int
    good: int

    @property
    def total(self) -> int:
        return self.slices * self.N * self.W

    @property
    def prob(self) -> float:
        if self.W == 0:
            return min(1.0, self.K / self.N)
        return self.good / self.total


@dataclass
class PassRecord:
    axes: List[AxisRecord]
    mismatches: list
    near_ties: int
    kappa: float

    @property
    def prob(self) -> float:
        return float(np.prod([a.prob for a in self.axes])) if self.axes else 1.0


def _kappa(values, in_axes) -> float:
    try:
        g = RegularGrid([a[0] for a in in_axes], [a[-1] for a in in_axes], [len(a) for a in in_axes])
        return curvature_report(DiscreteFn(g, np.asarray(values, dtype=float).ravel())).condition_number
    except Exception:
        return math.inf


class SimulatedTransform:
    """Drop-in replacement for ``factorized_lft`` that relabels every slice.

    Axes are processed in the same order and with the same sign conventions
    as the classical transform. Each call appends a ``PassRecord``.
    """

    def __init__(self, w_rule: str = "count"):
        if w_rule not in W_RULES:
            raise ValueError(f"w_rule must be one of {W_RULES}")
        self.w_rule = w_rule
        self.records: List[PassRecord] = []

    def __call__(self, values, in_axes, out_axes):
        d = len(in_axes)
        arr = np.asarray(values, dtype=float).reshape([len(a) for a in in_axes])
        kappa = _kappa(values, in_axes)
        args = [None] * d
        axes_rec, mism, near = [], [], 0
        for k in range(d - 1, -1, -1):
            moved = np.moveaxis(arr, k, -1)
            lead = moved.shape[:-1]
            ys = moved.reshape(-1, moved.shape[-1])
            if k != d - 1:
                ys = -ys
            x = np.asarray(in_axes[k], dtype=float)
            q = np.asarray(out_axes[k], dtype=float)
            uq, inv = np.unique(q, return_inverse=True)
            ref_v, ref_a = _lft_axis(ys, x, uq)
            out = np.empty((ys.shape[0], len(uq)))
            arg = np.empty((ys.shape[0], len(uq)), dtype=np.int64)
            W, good = 0, 0
            for r in range(ys.shape[0]):
                res = _simulate_slice(x, ys[r], uq, (ref_v[r], ref_a[r]), self.w_rule)
                out[r], arg[r] = res.values, res.arg
                W = max(W, res.good.W)
                good += res.good.good_count
                mism += [(k, r) + t for t in res.mismatches]
                near += res.near_ties
            axes_rec.append(AxisRecord(k, ys.shape[0], len(x), len(uq), W, good))
            out, arg = out[:, inv], arg[:, inv]
            arr = np.moveaxis(out.reshape(lead + (len(q),)), -1, k)
            args[k] = np.moveaxis(arg.reshape(lead + (len(q),)), -1, k)
        self.records.append(PassRecord(axes_rec[::-1], mism, near, kappa))
        out_shape = tuple(len(a) for a in out_axes)
        J = np.indices(out_shape).reshape(d, -1)
        picked = []
        for k in range(d):
            index = tuple(picked) + tuple(J[j] for j in range(k, d))
            picked.append(args[k][index])
        flat = np.ravel_multi_index(tuple(picked), tuple(len(a) for a in in_axes))
        return arr.ravel(), flat


def simulate_qlft(f: DiscreteFn, duals, w_rule: str = "count"):
    """Simulated transform of f onto the dual grid.

    Returns (DiscreteFn on the duals, postselection probability, diagnostics).
    Mismatches against the exact transform are reported, never raised.
    """
    g = _as_grid(duals)
    sim = SimulatedTransform(w_rule)
    vals, flat = sim(f.values, f.grid.axes(), g.axes())
    rec = sim.records[0]
    diag = {
        "mismatches": rec.mismatches,
        "near_ties": rec.near_ties,
        "axes": [asdict(a) for a in rec.axes],
        "argmax": flat,
        "kappa_hat": rec.kappa,
    }
    return DiscreteFn(g, vals), rec.prob, diag


# ---------------------------------------------------------------- DP simulation


@dataclass
class StageSim:
    stage: int
    step: str  # "dual" (value -> conjugate) or "primal" (h -> h*)
    registers: int
    good_count: int
    total_count: int
    postselect_prob: float
    kappa_bound: float
    W: tuple
    mismatches: list = field(default_factory=list)
    near_ties: int = 0


@dataclass
class SimTrace:
    stages: List[StageSim]
    gamma: float
    d: int
    T: int
    r: int = 1

    @property
    def overall_prob(self) -> float:
        p = 1.0
        for s in self.stages:
            p *= s.postselect_prob
        return p

    @property
    def expected_amp_rounds(self) -> float:
        p = self.overall_prob
        return 1.0 / math.sqrt(p) if p > 0 else math.inf

    @property
    def gamma_power_bound(self) -> float:
        return self.gamma ** (self.d * self.r * self.T)

    @property
    def mismatch_count(self) -> int:
        return sum(len(s.mismatches) for s in self.stages)

    @property
    def near_tie_count(self) -> int:
        return sum(s.near_ties for s in self.stages)

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else str(v)

        return {
            "stages": [
                {**asdict(s), "kappa_bound": num(s.kappa_bound), "W": list(s.W),
                 "mismatches": [list(m) for m in s.mismatches]}
                for s in self.stages
            ],
            "overall_prob": self.overall_prob,
            "expected_amp_rounds": num(self.expected_amp_rounds),
            "gamma": num(self.gamma),
            "gamma_power_bound": num(self.gamma_power_bound),
            "mismatch_count": self.mismatch_count,
            "near_tie_count": self.near_tie_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'stage':>5} {'step':>6} {'good':>10} {'total':>10} {'prob':>12} {'bound':>12} {'mism':>5}"]
        for s in self.stages:
            lines.append(
                f"{s.stage:>5} {s.step:>6} {s.good_count:>10} {s.total_count:>10} "
                f"{s.postselect_prob:>12.6g} {s.kappa_bound:>12.6g} {len(s.mismatches):>5}"
            )
        lines.append(f"overall_prob {self.overall_prob:.6g}  expected_amp_rounds {self.expected_amp_rounds:.6g}  "
                     f"gamma_power_bound {self.gamma_power_bound:.6g}")
        return "\n".join(lines)


def _stage_sim(stage: int, step: str, recs: List[PassRecord], power: int = 1) -> StageSim:
    p = 1.0
    for r in recs:
        p *= r.prob**power
    good = sum(a.good for r in recs for a in r.axes) * power
    total = sum(a.total for r in recs for a in r.axes) * power
    kappa = max((r.kappa for r in recs), default=math.inf)
    W = tuple(a.W for a in recs[0].axes) if recs else ()
    mism = [m for r in recs for m in r.mismatches]
    near = sum(r.near_ties for r in recs)
    bound = 1.0 / kappa if kappa > 0 and math.isfinite(kappa) else 0.0
    return StageSim(stage, step, len(recs) * power, good, total, p, bound, W, mism, near)


def gamma_for_model(model: DpModel) -> float:
    """gamma from the analytic moduli of the model's costs (nan if unknown)."""
    mods = [c.moduli() for c in (model.gx, model.gu, model.gT)]
    if any(m is None for m in mods):
        return math.nan
    (Lx, mx), (Lu, mu), (LT, mT) = mods
    if Lx == 0 and mx == 0:
        if Lu == mu and LT == mT:
            return 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                return gamma_with_linear_state_cost(PhiInputs(0, model.T, 0.0, 0.0, Lu, mu, LT, mT))
            except BadModulus:
                return math.nan
    try:
        return gamma(PhiInputs(0, model.T, Lx, mx, Lu, mu, LT, mT))
    except BadModulus:
        return math.nan


def simulate_qdp(
    model: DpModel,
    grid: Optional[RegularGrid] = None,
    T: Optional[int] = None,
    noise=None,
    dual_policy=None,
    K: Optional[int] = None,
    w_rule: str = "count",
):
    """Run the deterministic (noise None) or stochastic pipeline with simulated transforms.

    Returns (final value register, SimTrace). The deterministic register is
    J_0 on the state grid; the stochastic one is J_0 evaluated on the grid from
    the stage-0 dual table. All arithmetic outside the relabeling is shared
    with the classical solvers.
    """
    T = model.T if T is None else T
    for t in range(T):
        if not model.is_diagonal(t):
            raise ValueError("simulation needs diagonal A' so that queries form a product grid")
    g = model.state_grid if grid is None else _as_grid(grid)
    sim = SimulatedTransform(w_rule)
    stages: List[StageSim] = []
    if noise is None:
        reps = solve(model, g, dual_policy, T, K, transform=sim)
        recs = sim.records
        for n, t in enumerate(range(T - 1, -1, -1)):
            stages.append(_stage_sim(t, "dual", [recs[2 * n]]))
            stages.append(_stage_sim(t, "primal", [recs[2 * n + 1]]))
        final = reps[0].value
        r_max = 1
    else:
        sol = stoch_solve(model, noise, g, dual_policy, T, K, transform=sim)
        final = sol.first_stage_grid(g, transform=sim)
        recs = sim.records
        pos, r_max = 0, 1
        for t in range(T - 1, 0, -1):
            r = noise_at(noise, t, model.dim).r
            r_max = max(r_max, r)
            stages.append(_stage_sim(t, "dual", [recs[pos]], power=r))
            stages.append(_stage_sim(t, "primal", recs[pos + 1 : pos + 1 + r]))
            pos += 1 + r
        stages.append(_stage_sim(0, "dual", [recs[pos]]))
        stages.append(_stage_sim(0, "primal", [recs[pos + 1]]))
    return final, SimTrace(stages, gamma_for_model(model), model.dim, T, r_max)


def point_query_cost(trace: SimTrace, N: int) -> int:
    """ceil(sqrt(N / overall_prob)): expected repetitions to read one state's value."""
    p = trace.overall_prob
    if p <= 0:
        return math.inf
    return int(math.ceil(math.sqrt(N) / math.sqrt(p) * (1.0 - 1e-12)))
