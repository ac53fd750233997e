import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conjdp.costs import QuadraticCost, zero_cost
from conjdp.dp_det import (
    BellmanDPSolver,
    ConjugateDPSolver,
    LatticeDuals,
    bellman_step,
    conjugate_dp_step,
    epsilon_grid_sizes,
    error_bounds,
    extract_policy,
    policy_error_bound,
    reports_to_csv,
    solve,
)
from conjdp.grid import MixedSpace, RegularGrid
from conjdp.instances import lqr_policy, lqr_value, make_lqr, random_quadratic_model
from conjdp.lft import DiscreteFn, canonical_dual_grid
from conjdp.model import DpModel


def terminal(model):
    g = model.state_grid
    return DiscreteFn(g, model.gT(g.points()))


def test_bellman_one_step_lqr():
    m = make_lqr(1, 1, points=33, action_points=257)
    res = bellman_step(terminal(m), m)
    x = m.state_grid.points()
    h = m.state_grid.spacing[0]
    # successors x/2 fall between grid points; linear interpolation of x^2 adds at most h^2/4
    np.testing.assert_allclose(res.value.values, x[:, 0] ** 2 / 2, rtol=0, atol=h * h / 4 + 1e-12)
    np.testing.assert_allclose(res.policy[:, 0], -x[:, 0] / 2, atol=h)


def test_bellman_no_choice():
    st_ = MixedSpace.box([-1], [1], [9])
    act = MixedSpace.box([0], [0], [1])
    m = DpModel([[1.0]], [[0.0]], st_, act, QuadraticCost([2.0]), zero_cost(1), QuadraticCost([4.0]), 1)
    x = st_.grid.points()[:, 0]
    res = bellman_step(terminal(m), m)
    np.testing.assert_allclose(res.value.values, x**2 + 2 * x**2, atol=1e-12)


def test_conjugate_step_lqr_within_bound():
    m = make_lqr(1, 1, points=65)
    J = terminal(m)
    duals = canonical_dual_grid(J, 65)
    step = conjugate_dp_step(J, m, duals)
    E1, E2 = error_bounds(m, m.state_grid, duals, 2.0, 0)
    x = m.state_grid.points()
    err = np.max(np.abs(step.value.values - x[:, 0] ** 2 / 2))
    assert err <= E1 + E2


def test_conjugate_step_state_killed():
    g = MixedSpace.box([-1], [1], [33])
    act = MixedSpace.box([-2], [2], [129])
    m = DpModel([[0.0]], [[1.0]], g, act, zero_cost(1), QuadraticCost([2.0], lower=-2, upper=2),
                QuadraticCost([2.0], b=[0.5]), 1)
    J = terminal(m)
    step = conjugate_dp_step(J, m, canonical_dual_grid(J, 65))
    # min_u u^2 + u^2 + 0.5 u = -1/32, the same at every state
    assert np.ptp(step.value.values) == 0.0
    assert step.value.values[0] == pytest.approx(-1.0 / 32.0, abs=2e-3)


def test_error_bounds_integer_block_has_no_E1():
    from conjdp.instances import make_lower_bound_instance

    m = make_lower_bound_instance(3, 1, (1, 0, 1))
    E1, _ = error_bounds(m, m.state_grid, RegularGrid([0, 0, 0], [1, 1, 1], [2, 2, 2]), 1.0, 0)
    assert E1 == 0.0


def test_E2_shrinks_with_denser_duals():
    m = make_lqr(1, 1, points=33)
    J = terminal(m)
    e = [error_bounds(m, m.state_grid, canonical_dual_grid(J, K), 2.0, 0)[1] for K in (33, 65, 129, 257)]
    assert all(a > b for a, b in zip(e, e[1:]))
    r = [a / b for a, b in zip(e, e[1:])]
    assert all(1.6 < q < 2.4 for q in r)


def test_solve_lqr_T3():
    m = make_lqr(1, 3, points=65)
    reps = solve(m)
    x = m.state_grid.points()
    total = 0.0
    for r in sorted(reps, key=lambda r: -r.stage):
        total += r.bound
        err = np.max(np.abs(r.value.values - lqr_value(x, r.stage, 3)))
        assert err <= total
    assert [r.stage for r in reps] == [0, 1, 2]


def test_solve_T1_is_one_step():
    m = make_lqr(1, 1, points=33)
    J = terminal(m)
    step = conjugate_dp_step(J, m, canonical_dual_grid(J, 33))
    np.testing.assert_array_equal(solve(m)[0].value.values, step.value.values)


def test_extract_policy_lqr():
    m = make_lqr(1, 1, points=65)
    J = terminal(m)
    duals = canonical_dual_grid(J, 65)
    step = conjugate_dp_step(J, m, duals)
    E1, E2 = error_bounds(m, m.state_grid, duals, 2.0, 0)
    x = m.state_grid.points()
    u = extract_policy(x, step.s_star, m)
    bound = policy_error_bound(E1 + E2, 2.0)
    assert np.max(np.abs(u - lqr_policy(x, 0, 1))) <= bound


def test_extract_policy_clamped_and_no_dynamics():
    g = MixedSpace.box([-1], [1], [3])
    act = MixedSpace.box([-1], [1], [3])
    m = DpModel([[1.0]], [[1.0]], g, act, zero_cost(1), QuadraticCost([2.0], lower=-1, upper=1), zero_cost(1), 1)
    assert extract_policy([0.0], [2.0], m)[0] == -1.0
    m0 = DpModel([[1.0]], [[0.0]], g, act, zero_cost(1), QuadraticCost([2.0], b=[0.5], lower=-1, upper=1),
                 zero_cost(1), 1)
    assert extract_policy([0.0], [3.0], m0)[0] == pytest.approx(-0.25)


def test_extract_policy_warns_without_strong_convexity():
    g = MixedSpace.box([-1], [1], [3])
    act = MixedSpace.box([-1], [1], [3])
    m = DpModel([[1.0]], [[1.0]], g, act, zero_cost(1), QuadraticCost([0.0], lower=-1, upper=1), zero_cost(1), 1)
    with pytest.warns(UserWarning):
        extract_policy([0.0], [0.5], m)
    assert math.isinf(policy_error_bound(0.1, 0.0))


def test_epsilon_grid_sizes():
    assert epsilon_grid_sizes(3, 0.01, 1, 1) == (513, 513)
    assert epsilon_grid_sizes(1, 0.5, 1, 1) == (3, 3)
    with pytest.raises(ValueError):
        epsilon_grid_sizes(1, 0.0, 1, 1)


def test_lattice_duals_cover_gradients():
    m = make_lqr(1, 2, curvature=(0, 0.25, 1), points=33, action_bound=4.0)
    J = terminal(m)
    d = LatticeDuals(1 / 16)(J, 1).grid
    # gradients of x^2 on the 1/16 grid are x_i + x_{i+1}, from -31/16 to 31/16
    assert (d.lower[0], d.upper[0], d.spacing[0]) == (-31 / 16, 31 / 16, 1 / 16)
    assert d.points_per_axis == (63,)


def test_reports_csv_columns():
    reps = solve(make_lqr(1, 2, points=17))
    lines = reports_to_csv(reps).splitlines()
    assert lines[0].startswith("stage,E1,E2,bound,cumulative_bound")
    assert len(lines) == 3


@given(st.integers(0, 10_000))
def test_sandwich_random_quadratic(seed):
    rng = np.random.default_rng(seed)
    m = random_quadratic_model(rng, 1, 1, points=33)
    J = terminal(m)
    duals = canonical_dual_grid(J, 65)
    step = conjugate_dp_step(J, m, duals)
    from conjdp.conditioning import lipschitz_estimate

    E1, E2 = error_bounds(m, m.state_grid, duals, lipschitz_estimate(J), 0)
    ref = bellman_step(J, m)
    assert np.max(np.abs(step.value.values - ref.value.values)) <= E1 + E2 + ref.slack


def test_estimators():
    m = make_lqr(1, 2, points=65)
    est = ConjugateDPSolver(dual_points=65).fit(m)
    X = np.array([[0.5], [-0.25]])
    np.testing.assert_allclose(est.predict(X), X[:, 0] ** 2 / 3, atol=est.error_bound_)
    b = BellmanDPSolver(action_points=257).fit(m)
    np.testing.assert_allclose(b.predict(X), X[:, 0] ** 2 / 3, atol=1e-3)
    assert not b.violated_
    assert est.get_params()["dual_points"] == 65


def test_interpolation_slack_one_dim():
    from conjdp.dp_det import interpolation_slack

    g = RegularGrid([0], [3], [4])
    assert interpolation_slack(DiscreteFn(g, [0.0, 1.0, 4.0, 9.0])) == 0.0
    # the middle bump sits 1 above the chord from (0, 0) to (3, 3)
    assert interpolation_slack(DiscreteFn(g, [0.0, 2.0, 2.0, 3.0])) == pytest.approx(1.0)
