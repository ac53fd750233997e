import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conjdp import dp_det, dp_stoch
from conjdp.dp_det import LatticeDuals
from conjdp.errors import NotConvex
from conjdp.grid import RegularGrid
from conjdp.instances import make_lqr, make_pwl_instance
from conjdp.lft import DiscreteFn, canonical_dual_grid, dlft_bruteforce
from conjdp.model import NoiseModel
from conjdp.qlft_sim import SimTrace, StageSim, point_query_cost, qlft_good_set, simulate_qdp, simulate_qlft

from conftest import random_convex_fn


def fn(x, v):
    x = np.asarray(x, float)
    return DiscreteFn(RegularGrid([x[0]], [x[-1]], [len(x)]), np.asarray(v, float))


def enumerate_good(x, y, s):
    """Independent count: label j belongs to i when s_j lies in i's subgradient interval."""
    c = np.diff(y) / np.diff(x)
    lo = np.concatenate([[-np.inf], c])
    hi = np.concatenate([c, [np.inf]])
    per_i = [np.flatnonzero((s > lo[i]) & (s <= hi[i]) if 0 < i else (s <= hi[i])) for i in range(len(x))]
    per_i[-1] = np.flatnonzero(s >= lo[-1])
    W = max(len(p) for p in per_i)
    return sum(len(p) for p in per_i), W


def test_square_example_mapping():
    f = fn([0, 1, 2, 3], [0, 1, 4, 9])
    gs = qlft_good_set(f, RegularGrid([1], [5], [5]))
    assert gs.mapping() == {(0, 0): 0, (1, 0): 1, (1, 1): 2, (2, 0): 3, (2, 1): 4, (3, 0): 4}
    assert gs.W == 2 and gs.probability == 0.75
    vals, prob, diag = simulate_qlft(f, RegularGrid([1], [5], [5]))
    np.testing.assert_array_equal(vals.values, [0, 1, 2, 4, 6])
    assert prob == 0.75 and diag["mismatches"] == []


def test_every_label_hit_by_a_true_argmax():
    x = np.arange(4.0)
    y = x**2
    s = np.arange(1.0, 6.0)
    gs = qlft_good_set(fn(x, y), RegularGrid([1], [5], [5]))
    hit = set()
    for (i, m), j in gs.mapping().items():
        vals = s[j] * x - y
        assert vals[i] == vals.max()
        hit.add(j)
    assert hit == set(range(5))


def test_affine_only_endpoints():
    gs = qlft_good_set(fn(np.arange(5.0), 2 * np.arange(5.0)), RegularGrid([2], [2], [1]))
    assert set(gs.mapping()) == {(0, 0), (4, 0)}


def test_good_set_scales_with_W():
    # same dual spacing 1/16 over each function's gradient range
    x = np.linspace(-1, 1, 17)
    a = qlft_good_set(fn(x, x**2 / 2), RegularGrid([-15 / 16], [15 / 16], [31]))
    b = qlft_good_set(fn(x, x**2), RegularGrid([-30 / 16], [30 / 16], [61]))
    assert (a.W, b.W) == (2, 4)
    assert b.good_count > a.good_count


def test_nonconvex_rejected():
    with pytest.raises(NotConvex):
        qlft_good_set(fn([0, 1, 2], [0, 1, 0]), RegularGrid([0], [1], [2]))


def test_square_canonical_equals_bruteforce():
    x = np.arange(8.0)
    f = fn(x, x**2)
    duals = canonical_dual_grid(f, 8)
    vals, prob, diag = simulate_qlft(f, duals)
    np.testing.assert_array_equal(vals.values, dlft_bruteforce(f, duals)[0].values)
    assert diag["mismatches"] == []
    good, W = enumerate_good(x, x**2, duals.points()[:, 0])
    assert prob == good / (8 * W)


@given(st.integers(0, 10_000))
def test_probability_equals_enumeration(seed):
    rng = np.random.default_rng(seed)
    f = random_convex_fn(rng, RegularGrid, DiscreteFn, 1)
    K = int(rng.integers(2, 60))
    duals = canonical_dual_grid(f, K)
    vals, prob, diag = simulate_qlft(f, duals)
    x, y, s = f.grid.axis(0), f.values, duals.points()[:, 0]
    good, W = enumerate_good(x, y, s)
    gs = qlft_good_set(f, duals)
    assert gs.good_count == good
    assert prob == gs.good_count / (len(x) * gs.W)
    np.testing.assert_array_equal(vals.values, dlft_bruteforce(f, duals)[0].values)
    assert diag["mismatches"] == []


def test_floor_rule_can_leave_labels_unclaimed():
    m = make_lqr(1, 1, points=65)
    fin, tr = simulate_qdp(m, w_rule="floor")
    assert tr.mismatch_count > 0
    np.testing.assert_array_equal(fin.values, dp_det.solve(m)[0].value.values)


@pytest.mark.parametrize("T", [1, 2, 3])
def test_qdp_matches_classical(T):
    m = make_lqr(1, T, points=33)
    fin, tr = simulate_qdp(m)
    np.testing.assert_array_equal(fin.values, dp_det.solve(m)[0].value.values)
    assert tr.mismatch_count == 0
    assert len(tr.stages) == 2 * T
    assert tr.gamma == 1.0 and tr.gamma_power_bound == 1.0
    assert 0 < tr.overall_prob <= 1


def test_qdp_two_dim_and_pwl():
    m = make_lqr(2, 2, points=9)
    fin, tr = simulate_qdp(m)
    np.testing.assert_array_equal(fin.values, dp_det.solve(m)[0].value.values)
    assert tr.mismatch_count == 0
    m = make_pwl_instance()
    fin, tr = simulate_qdp(m)
    np.testing.assert_array_equal(fin.values, dp_det.solve(m)[0].value.values)
    assert tr.mismatch_count == 0


def test_qdp_stochastic_matches_classical():
    m = make_lqr(1, 3, points=33)
    noise = NoiseModel([[-0.125], [0.125]], [0.5, 0.5])
    fin, tr = simulate_qdp(m, noise=noise)
    sol = dp_stoch.stoch_solve(m, noise)
    np.testing.assert_array_equal(fin.values, sol.first_stage_grid(m.state_grid).values)
    assert tr.mismatch_count == 0 and tr.r == 2


def test_lattice_family_zero_mismatch():
    m = make_lqr(1, 4, curvature=(0, 0.25, 1), points=33, action_bound=4.0)
    pol = LatticeDuals(1 / 16)
    fin, tr = simulate_qdp(m, dual_policy=pol)
    np.testing.assert_array_equal(fin.values, dp_det.solve(m, dual_policy=pol)[0].value.values)
    assert tr.mismatch_count == 0 and tr.near_tie_count == 0


def test_point_query_cost_examples():
    def trace(p):
        return SimTrace([StageSim(0, "dual", 1, 1, 1, p, 1.0, (1,))], 1.0, 1, 1)

    assert point_query_cost(trace(1.0), 256) == 16
    assert point_query_cost(trace(0.25), 64) == 16
    assert point_query_cost(trace(0.0), 64) == math.inf


def test_point_query_cost_sqrt_scaling():
    costs = []
    for N in (65, 257, 1025):
        _, tr = simulate_qdp(make_lqr(1, 2, points=N))
        costs.append(point_query_cost(tr, N))
    r1, r2 = costs[1] / costs[0], costs[2] / costs[1]
    assert abs(r1 - 2) / 2 <= 0.1 and abs(r2 - 2) / 2 <= 0.1


def test_trace_serialization():
    _, tr = simulate_qdp(make_lqr(1, 1, points=17))
    d = tr.to_dict()
    assert d["mismatch_count"] == 0 and len(d["stages"]) == 2
    assert "overall_prob" in tr.table()
