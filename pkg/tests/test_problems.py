import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pintopt.field import GridSpec, operators
from pintopt.pfasst import Hierarchy, TimeDecomposition
from pintopt.problems import (NodeSeries, ObjectiveSpec, make_heat_problem, make_nagumo_problem,
                              nagumo_exact_control, nagumo_initial, objective_value, reduce_in_worker_order,
                              step_weights, unreflect)

from conftest import heat_hierarchy

C = 12 * np.pi ** 2


def test_published_heat_initial_value():
    p = make_heat_problem(heat_hierarchy(), lam=0.05, T=2.0, num_steps=4, initial_value="published")
    # x = (0.25, 0.25, 0.25) is grid point (2, 2, 2) on the 8-point grid; 16 points: (4, 4, 4)
    assert abs(p.y0[4, 4, 4] - (-1 / (0.6 * np.pi ** 2))) < 1e-12
    assert abs(p.y0[4, 4, 4] + 0.16887) < 1e-5


def test_consistent_heat_initial_value_matches_exact_state(small_heat):
    np.testing.assert_allclose(small_heat.y0, small_heat.exact_state[0, 0], atol=1e-15)


def test_manufactured_state_solves_the_heat_equation(small_heat):
    p, lam = small_heat, 0.05
    ops = p.ops
    x, y, z = p.grid.coordinates()
    S = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.sin(2 * np.pi * z)
    y_t = S / (C * lam)
    for j in range(p.num_steps):
        for m in range(p.hierarchy.fine.rule.num_nodes):
            r = y_t - ops.laplacian(p.exact_state[j, m]) - p.exact_control[j, m]
            assert ops.norm(r) < 1e-10 * ops.norm(p.exact_control[j, m]) + 1e-10


def test_manufactured_adjoint_and_optimality(small_heat):
    p, lam = small_heat, 0.05
    ops = p.ops
    S = -p.exact_adjoint[0, 0] / p.T
    for j in range(p.num_steps):
        for m in range(p.hierarchy.fine.rule.num_nodes):
            P, Y, Yd = p.exact_adjoint[j, m], p.exact_state[j, m], p.objective.target[j, m]
            # -p_t - Lap p = -(y - y_d) with p_t = S
            r = -S - ops.laplacian(P) + (Y - Yd)
            assert ops.norm(r) < 1e-9
    # lam u - p = 0 at the optimum
    np.testing.assert_allclose(lam * p.exact_control - p.exact_adjoint, 0.0, atol=1e-12)


def test_heat_problem_validation():
    with pytest.raises(ValueError):
        make_heat_problem(heat_hierarchy(), lam=0.0)
    with pytest.raises(ValueError):
        make_heat_problem(heat_hierarchy(), initial_value="other")
    h = Hierarchy.build([GridSpec.neumann(16, 20.0)], [3])
    with pytest.raises(ValueError):
        make_heat_problem(h)


def test_nagumo_initial_value():
    g = GridSpec(1, (20.0,), (40,), "neumann")
    (x,) = g.coordinates()
    y0 = nagumo_initial(g)
    assert abs(y0[np.argmin(abs(x - 4.75))] - 1.2 * np.sqrt(3)) < 1e-15
    assert abs(1.2 * np.sqrt(3) - 2.0785) < 1e-4
    assert y0[np.argmin(abs(x - 15.25))] == 0.0


def test_exact_control_vanishes_on_stable_equilibrium():
    g = GridSpec.neumann(16, 20.0)
    np.testing.assert_allclose(nagumo_exact_control(np.full(16, np.sqrt(3.0)), g, 1.0), 0.0, atol=1e-13)


@pytest.fixture(scope="module")
def nagumo_small():
    h = Hierarchy.build([GridSpec.neumann(32, 20.0), GridSpec.neumann(64, 20.0)], [3, 5])
    return make_nagumo_problem(h, gamma=1.0, num_steps=32)


def test_nagumo_target_freezes_after_switch(nagumo_small):
    p = nagumo_small
    yd, u = p.objective.target, p.exact_control
    # steps start at multiples of 5/32; the first frozen step starts at 2.5
    frozen = np.arange(32) * p.dt >= 2.5
    assert frozen.sum() == 16
    for j in np.flatnonzero(frozen):
        np.testing.assert_array_equal(yd[j], np.broadcast_to(yd[16, 0], yd[j].shape))
    np.testing.assert_array_equal(u[~frozen], 0.0)
    assert np.abs(u[frozen]).max() > 0.1
    assert not p.is_linear


def test_nagumo_y_nat_cache(tmp_path, nagumo_small):
    h = nagumo_small.hierarchy
    path = tmp_path / "ynat.pfld"
    a = make_nagumo_problem(h, num_steps=32, cache=path)
    assert path.exists()
    b = make_nagumo_problem(h, num_steps=32, cache=path)
    np.testing.assert_array_equal(a.objective.target, b.objective.target)


def test_node_series_interpolates_within_steps():
    nodes = np.array([0.0, 0.5, 1.0])
    t = (np.arange(3)[:, None] + nodes) * 0.5
    vals = (t ** 2)[:, :, None] * np.ones(4)
    s = NodeSeries(0.0, 0.5, nodes, vals)
    for tt in (0.1, 0.6, 1.4, 1.5):
        np.testing.assert_allclose(s.at(tt), tt ** 2, atol=1e-14)


def test_unreflect_is_an_involution():
    a = np.arange(24.0).reshape(2, 3, 4)
    np.testing.assert_array_equal(unreflect(unreflect(a)), a)
    np.testing.assert_array_equal(unreflect(a)[0, 0], a[-1, -1])


def test_step_weights():
    np.testing.assert_array_equal(step_weights("trapezoid", 3, np.ones(3)), [0.5, 0.0, 0.5])
    np.testing.assert_array_equal(step_weights("collocation", 3, [1 / 6, 2 / 3, 1 / 6]), [1 / 6, 2 / 3, 1 / 6])
    with pytest.raises(ValueError):
        step_weights("simpson", 3, np.ones(3))


def _unit_cube_objective(N=4, nodes=3, lam=0.0):
    g = GridSpec.periodic(4)
    return g, ObjectiveSpec(lam=lam, target=np.zeros((N, nodes) + g.shape))


def test_objective_zero_at_target():
    g, obj = _unit_cube_objective()
    Y = np.zeros(obj.target.shape)
    assert objective_value(Y, Y, obj, operators(g), 0.5, TimeDecomposition(4, 1, 2.0), np.array([0.5, 0, 0.5])) == 0.0


@pytest.mark.parametrize("weights", [np.array([0.5, 0.0, 0.5]), np.array([1 / 6, 2 / 3, 1 / 6])])
def test_objective_of_unit_misfit(weights):
    g, obj = _unit_cube_objective()
    Y = np.ones(obj.target.shape)
    J = objective_value(Y, np.zeros_like(Y), obj, operators(g), 0.5, TimeDecomposition(4, 1, 2.0), weights)
    assert abs(J - 1.0) < 1e-14


def test_objective_terminal_term():
    g = GridSpec.periodic(4)
    obj = ObjectiveSpec(lam=0.0, target=np.zeros((2, 2) + g.shape), sigma=2.0, terminal_target=np.zeros(g.shape))
    Y = np.zeros(obj.target.shape)
    Y[-1, -1] = 3.0
    J = objective_value(Y, Y * 0, obj, operators(g), 1.0, TimeDecomposition(2, 1, 2.0), np.array([0.0, 0.0]))
    assert abs(J - 0.5 * 2.0 * 9.0) < 1e-13
    with pytest.raises(ValueError):
        ObjectiveSpec(lam=0.0, target=obj.target, sigma=1.0)


@given(seed=st.integers(0, 2 ** 16))
@settings(max_examples=20, deadline=None)
def test_reduction_is_independent_of_worker_count(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec.periodic(4)
    N = 20
    obj = ObjectiveSpec(lam=0.3, target=rng.standard_normal((N, 3) + g.shape))
    Y, U = rng.standard_normal((2, N, 3) + g.shape)
    w = np.array([1 / 6, 2 / 3, 1 / 6])
    J1 = objective_value(Y, U, obj, operators(g), 0.1, TimeDecomposition(N, 1, 2.0), w)
    JN = objective_value(Y, U, obj, operators(g), 0.1, TimeDecomposition(N, N, 2.0), w)
    assert abs(J1 - JN) <= 1e-13 * max(1.0, abs(J1))
    vals = list(rng.standard_normal(N))
    assert reduce_in_worker_order(vals, TimeDecomposition(N, 4, 1.0)) == pytest.approx(sum(vals), abs=1e-12)
