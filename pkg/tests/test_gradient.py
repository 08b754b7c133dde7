import dataclasses

import numpy as np
import pytest

from pintopt.field import GridSpec
from pintopt.gradient import (MIXED, SEQUENTIAL, SIMULTANEOUS, STATE_THEN_ADJOINT, ReducedObjective,
                              SolverSettings, StateArchive, StrategyError, evaluate_gradient, solve_adjoint,
                              solve_adjoint_mixed, solve_state)
from pintopt.pfasst import Hierarchy, Tolerance
from pintopt.problems import ObjectiveSpec, make_nagumo_problem

TOL = Tolerance(1e-11, 1e-11, 100)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def smooth_control(p, seed=0):
    rng = np.random.default_rng(seed)
    x, y, z = p.grid.coordinates()
    t = p.node_times()[:, :, None, None, None]
    a, b, c = rng.uniform(0.5, 1.5, 3)
    return (a * np.cos(2 * np.pi * (x + y)) * np.sin(t) + b * np.sin(2 * np.pi * z) * t
            + c * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.sin(2 * np.pi * z))


@pytest.fixture(scope="module")
def u_test(small_heat):
    return smooth_control(small_heat)


@pytest.fixture(scope="module")
def reference(small_heat, u_test):
    return evaluate_gradient(small_heat, u_test, SEQUENTIAL, SolverSettings(1, TOL))


@pytest.mark.parametrize("strategy,R", [(STATE_THEN_ADJOINT, 2), (STATE_THEN_ADJOINT, 4), (SIMULTANEOUS, 4),
                                        (MIXED, 1), (MIXED, 2), (MIXED, 4)])
def test_strategies_agree(small_heat, u_test, reference, strategy, R):
    res = evaluate_gradient(small_heat, u_test, strategy, SolverSettings(R, TOL))
    assert res.state_report.converged and res.adjoint_report.converged
    assert rel(res.state, reference.state) < 1e-10
    assert rel(res.adjoint, reference.adjoint) < 1e-9
    assert rel(res.gradient, reference.gradient) < 1e-9
    assert abs(res.J - reference.J) < 1e-12 * abs(reference.J)


def test_single_step_simultaneous_equals_sequential():
    from pintopt.problems import make_heat_problem
    from conftest import heat_hierarchy
    p = make_heat_problem(heat_hierarchy(), num_steps=1)
    u = smooth_control(p, 3)
    a = evaluate_gradient(p, u, SIMULTANEOUS, SolverSettings(1, TOL))
    b = evaluate_gradient(p, u, SEQUENTIAL, SolverSettings(1, TOL))
    assert rel(a.gradient, b.gradient) < 1e-12


def test_gradient_vanishes_at_manufactured_optimum(small_heat):
    res = evaluate_gradient(small_heat, small_heat.exact_control, STATE_THEN_ADJOINT, SolverSettings(1, TOL))
    scale = np.linalg.norm(small_heat.exact_control) * 0.05
    # only the time discretization error of 4 steps remains
    assert np.linalg.norm(res.gradient) < 1e-3 * scale
    assert rel(res.adjoint, small_heat.exact_adjoint) < 1e-3


def test_adjoint_vanishes_on_target():
    from pintopt.problems import make_heat_problem
    from conftest import heat_hierarchy
    p = make_heat_problem(heat_hierarchy(), num_steps=2)
    Y, _ = solve_state(p, p.zero_control(), SolverSettings(1, TOL))
    q = dataclasses.replace(p, objective=ObjectiveSpec(lam=p.objective.lam, target=Y))
    P, rep = solve_adjoint(q, Y, SolverSettings(2, TOL))
    assert np.abs(P).max() == 0.0
    Pm, _, local = solve_adjoint_mixed(q, Y, SolverSettings(2, TOL))
    assert np.abs(Pm).max() == 0.0 and np.abs(local).max() == 0.0


def test_directional_derivative_matches_central_difference(small_heat, u_test):
    p = small_heat
    ev = ReducedObjective(p, STATE_THEN_ADJOINT, SolverSettings(1, TOL))
    u = ev.control(u_test)
    g = ev.gradient(u)
    x, y, z = p.grid.coordinates()
    S = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.sin(2 * np.pi * z)
    d = u.like(np.cos(p.node_times())[:, :, None, None, None] * (S + np.cos(2 * np.pi * (x - z))))
    eps = 1e-3
    fd = (ev.value(u.axpy(eps, d)) - ev.value(u.axpy(-eps, d))) / (2 * eps)
    # the adjoint is discretized separately, so agreement is limited by dt = 0.5 here
    assert abs(fd - g.inner(d)) < 1e-3 * abs(fd)


def test_strategy_errors(small_heat):
    with pytest.raises(StrategyError):
        evaluate_gradient(small_heat, small_heat.zero_control(), "backwards")
    with pytest.raises(StrategyError):
        evaluate_gradient(small_heat, small_heat.zero_control(), SIMULTANEOUS, SolverSettings(2, TOL))
    h = Hierarchy.build([GridSpec.neumann(32, 20.0)], [3])
    nag = make_nagumo_problem(h, num_steps=32)
    with pytest.raises(StrategyError):
        evaluate_gradient(nag, nag.zero_control(), MIXED)
    with pytest.raises(ValueError):
        SolverSettings(propagator="taylor")


def test_reduced_objective_reuses_the_state_solve(small_heat, u_test):
    ev = ReducedObjective(small_heat, STATE_THEN_ADJOINT, SolverSettings(1, TOL))
    u = ev.control(u_test)
    J = ev.value(u)
    assert ev.value(u) == J and ev.state_solves == 1
    ev.gradient(u)
    assert ev.state_solves == 1 and ev.adjoint_solves == 1
    assert ev.state_sweeps > 0 and ev.adjoint_sweeps > 0 and ev.all_converged


def test_warm_archive_cuts_sweeps(small_heat, u_test):
    s = SolverSettings(2, TOL)
    arch = StateArchive()
    cold = evaluate_gradient(small_heat, u_test, STATE_THEN_ADJOINT, s, arch)
    warm = evaluate_gradient(small_heat, u_test * 1.01, STATE_THEN_ADJOINT, s, arch)
    cold2 = evaluate_gradient(small_heat, u_test * 1.01, STATE_THEN_ADJOINT, s)
    assert warm.state_report.total_sweeps() < cold.state_report.total_sweeps()
    assert warm.adjoint_report.total_sweeps() < cold.adjoint_report.total_sweeps()
    assert rel(warm.gradient, cold2.gradient) < 1e-9
