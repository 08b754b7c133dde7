"""Reduced gradients g = lam*u - p via time-parallel state and adjoint solves.

Strategies:

* ``sequential``: state then adjoint, each by sequential MLSDC.
* ``state_then_adjoint``: the state by PFASST, then the adjoint by PFASST
  over reflected time on the same workers.
* ``simultaneous``: one step of each per worker (needs N == R); state and
  adjoint iterate together, the adjoint reading the current state iterate.
* ``mixed`` (linear problems): every worker solves its adjoint steps from a
  zero initial value, then the homogeneous corrections are relayed serially.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .field import SpectralOps
from .optimizer import ControlTrajectory
from .pfasst import (SolveReport, StepSolver, TimeDecomposition, Tolerance, pfasst_solve,
                     run_workers)
from .pfasst.controller import NO_LINK, _block_links, _gather
from .problems import ProblemDefinition, objective_value, step_weights, unreflect

SEQUENTIAL = "sequential"
STATE_THEN_ADJOINT = "state_then_adjoint"
SIMULTANEOUS = "simultaneous"
MIXED = "mixed"
STRATEGIES = (SEQUENTIAL, STATE_THEN_ADJOINT, SIMULTANEOUS, MIXED)
PROPAGATORS = ("collocation", "exact")


class StrategyError(ValueError):
    pass


@dataclass
class SolverSettings:
    num_workers: int = 1
    tol: Tolerance = field(default_factory=Tolerance)
    backend: str = "thread"
    predictor_sweeps: int = 1
    time_rule: str = "collocation"
    propagator: str = "collocation"  # homogeneous relay of the mixed strategy
    strict: bool = False

    def __post_init__(self):
        if self.num_workers < 1:
            raise ValueError("num_workers must be positive")
        if self.propagator not in PROPAGATORS:
            raise ValueError(f"unknown propagator {self.propagator!r}")


@dataclass
class GradientResult:
    gradient: np.ndarray
    J: float
    state: np.ndarray
    adjoint: np.ndarray  # forward time order
    state_report: SolveReport
    adjoint_report: SolveReport


@dataclass
class StateArchive:
    """Trajectories of the previous evaluation, used as warm starts."""

    state: Optional[np.ndarray] = None
    adjoint: Optional[np.ndarray] = None  # forward time order
    local_adjoint: Optional[np.ndarray] = None  # mixed strategy, reflected order

    def clear(self) -> None:
        self.state = self.adjoint = self.local_adjoint = None


def _reflect(P: Optional[np.ndarray]) -> Optional[np.ndarray]:
    return None if P is None else unreflect(P)


def solve_state(problem: ProblemDefinition, u: np.ndarray, settings: SolverSettings,
                warm: Optional[np.ndarray] = None) -> tuple[np.ndarray, SolveReport]:
    return pfasst_solve(problem.hierarchy, problem.decomposition(settings.num_workers), problem.y0,
                        problem.state_equation(u), settings.tol, settings.backend, warm,
                        settings.predictor_sweeps, settings.strict)


def solve_adjoint(problem: ProblemDefinition, Y: np.ndarray, settings: SolverSettings,
                  warm: Optional[np.ndarray] = None) -> tuple[np.ndarray, SolveReport]:
    """Adjoint by PFASST in reflected time; ``warm`` and the result are in forward order."""
    decomp = problem.decomposition(settings.num_workers, reflected=True)
    Q, rep = pfasst_solve(problem.hierarchy, decomp, problem.adjoint_initial(Y[-1, -1]),
                          problem.adjoint_equation(Y), settings.tol, settings.backend, _reflect(warm),
                          settings.predictor_sweeps, settings.strict)
    return unreflect(Q), rep


# -- mixed strategy -------------------------------------------------------------------

@lru_cache(maxsize=32)
def _collocation_factors(ops: SpectralOps, nodes: tuple, Q_bytes: bytes, kappa: float, dt: float) -> np.ndarray:
    Q = np.frombuffer(Q_bytes).reshape(len(nodes), len(nodes))
    k2, inv = np.unique(ops.k2, return_inverse=True)
    z = -dt * kappa * k2
    n = len(nodes)
    A = np.eye(n)[None] - z[:, None, None] * Q[None]
    r = np.linalg.solve(A, np.ones((len(k2), n, 1)))[..., 0]  # (modes, nodes)
    return r[inv.reshape(ops.k2.shape)]  # (*spectral shape, nodes)


def homogeneous_propagator(problem: ProblemDefinition, kind: str = "collocation") -> Callable:
    """delta -> node values of the homogeneous adjoint over one step starting at delta.

    ``collocation`` applies the per-mode stability function of the fine
    collocation rule, so the relayed correction matches the collocation
    solution; ``exact`` uses exp(-kappa k^2 t).
    """
    ops, rule, kappa, dt = problem.ops, problem.hierarchy.fine.rule, problem.kappa, problem.dt
    if kind == "exact":
        def prop(delta):
            return np.array([ops.propagate(delta, kappa, dt * tau) for tau in rule.nodes])
    elif kind == "collocation":
        R = _collocation_factors(ops, tuple(rule.nodes), np.ascontiguousarray(rule.Q, dtype=float).tobytes(),
                                 kappa, dt)

        def prop(delta):
            c = ops.forward(delta)
            return np.array([ops.mode_filter(c, R[..., m]) for m in range(rule.num_nodes)])
    else:
        raise ValueError(f"unknown propagator {kind!r}")
    return prop


def solve_adjoint_mixed(problem: ProblemDefinition, Y: np.ndarray, settings: SolverSettings,
                        warm_local: Optional[np.ndarray] = None
                        ) -> tuple[np.ndarray, SolveReport, np.ndarray]:
    """Local zero-start adjoint solves plus a serial relay of homogeneous corrections.

    Returns the adjoint in forward order, the report of the local solves and
    the local solutions in reflected order (the next warm start).
    """
    if not problem.is_linear:
        raise StrategyError("the mixed strategy needs a linear state equation")
    decomp = problem.decomposition(settings.num_workers, reflected=True)
    eq = problem.adjoint_equation(Y)
    q0 = problem.adjoint_initial(Y[-1, -1])
    prop = homogeneous_propagator(problem, settings.propagator)
    h, dt, tol, N = problem.hierarchy, problem.dt, settings.tol, problem.num_steps
    zero = np.zeros(problem.grid.shape)

    def work(endpoint):
        rank = 0 if endpoint is None else endpoint.rank
        mine = decomp.steps_of(rank)
        local, records = {}, []
        for i in mine:
            s = StepSolver(h, eq, i, dt, NO_LINK, tol, settings.predictor_sweeps)
            s.run(zero, None if warm_local is None else warm_local[i])
            local[i] = s.fine.y.copy()
            records.append(s.record())
        full, carry = {}, None
        for i in mine:
            if i == 0:
                delta = q0
            elif decomp.owner(i - 1) == rank:
                delta = carry
            else:
                delta = endpoint.recv(decomp.owner(i - 1), ("relay", "delta", i, 0))
            full[i] = local[i] + prop(delta)
            carry = full[i][-1]
            if i + 1 < N and decomp.owner(i + 1) != rank:
                endpoint.send(decomp.owner(i + 1), ("relay", "delta", i + 1, 0), carry)
        return {"trajectories": full, "records": records, "local": local}

    t0 = time.perf_counter()
    if decomp.num_workers == 1:
        results = [work(None)]
    else:
        results = run_workers(settings.backend, decomp.num_workers, work)
    Q, rep = _gather(results, decomp, h, time.perf_counter() - t0, settings.strict)
    L = np.empty_like(Q)
    for r in results:
        for i, v in r["local"].items():
            L[i] = v
    return unreflect(Q), rep, L


# -- simultaneous strategy -----------------------------------------------------------

class _CurrentState:
    """Indexable view of the one state step a worker holds."""

    def __init__(self, step: int, solver: StepSolver):
        self.step = step
        self.solver = solver

    def __getitem__(self, j):
        if j == self.step:
            return self.solver.fine.y
        raise IndexError(f"this worker holds state step {self.step}, not {j}")


def solve_simultaneous(problem: ProblemDefinition, u: np.ndarray, settings: SolverSettings,
                       warm_state: Optional[np.ndarray] = None, warm_adjoint: Optional[np.ndarray] = None
                       ) -> tuple[np.ndarray, np.ndarray, SolveReport, SolveReport]:
    """State and adjoint iterated together, one step of each per worker.

    Worker w owns state step w and reflected adjoint step N-1-w.  After each
    state iteration the adjoint data is rebuilt from the current state
    iterate; the adjoint may only converge once the local state has.
    """
    N, R = problem.num_steps, settings.num_workers
    if N != R:
        raise StrategyError(f"the simultaneous strategy needs one step per worker (N={N}, R={R})")
    h, dt, tol = problem.hierarchy, problem.dt, settings.tol
    dS = problem.decomposition(R)
    dA = problem.decomposition(R, reflected=True)
    state_eq = problem.state_equation(u)
    warm_adj = _reflect(warm_adjoint)
    L = len(h)

    def work(endpoint):
        w = 0 if endpoint is None else endpoint.rank
        i = N - 1 - w
        S = StepSolver(h, state_eq, w, dt, _block_links(dS, endpoint, "state", w), tol, settings.predictor_sweeps)
        S.predict(problem.y0 if w == 0 else None, None if warm_state is None else warm_state[w])
        view = _CurrentState(w, S)
        adj_eq = problem.adjoint_equation(view)
        A = StepSolver(h, adj_eq, i, dt, _block_links(dA, endpoint, "adjoint", i), tol, settings.predictor_sweeps)
        A.predict(problem.adjoint_initial(S.fine.end) if i == 0 else None,
                  None if warm_adj is None else warm_adj[i])
        while True:
            s_more = not S.converged and S.iterations < tol.max_iters
            a_more = not A.converged and A.iterations < tol.max_iters
            if not (s_more or a_more):
                break
            if s_more:
                S.iterate()
            if a_more:
                A.refresh_rhs([adj_eq.rhs(i, l) for l in range(L)])
                if i == 0 and problem.objective.sigma > 0:
                    A._set_fine_initial(problem.adjoint_initial(S.fine.end))
                A.iterate(data_final=S.converged)
        return ({"trajectories": {w: S.fine.y.copy()}, "records": [S.record()]},
                {"trajectories": {i: A.fine.y.copy()}, "records": [A.record()]})

    t0 = time.perf_counter()
    if R == 1:
        results = [work(None)]
    else:
        results = run_workers(settings.backend, R, work)
    wall = time.perf_counter() - t0
    Y, rs = _gather([r[0] for r in results], dS, h, wall, settings.strict)
    Q, ra = _gather([r[1] for r in results], dA, h, wall, settings.strict)
    return Y, unreflect(Q), rs, ra


# -- driver ------------------------------------------------------------------------------

def evaluate_gradient(problem: ProblemDefinition, u: np.ndarray, strategy: str = STATE_THEN_ADJOINT,
                      settings: Optional[SolverSettings] = None, archive: Optional[StateArchive] = None,
                      state: Optional[tuple[np.ndarray, SolveReport]] = None) -> GradientResult:
    """Objective and reduced gradient at ``u`` (node data of shape (N, nodes, *grid)).

    ``archive`` supplies warm starts and is updated in place.  ``state``
    reuses an already computed state solve (ignored by ``simultaneous``).
    """
    settings = settings or SolverSettings()
    if strategy not in STRATEGIES:
        raise StrategyError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if strategy == SEQUENTIAL and settings.num_workers != 1:
        settings = SolverSettings(1, settings.tol, settings.backend, settings.predictor_sweeps,
                                  settings.time_rule, settings.propagator, settings.strict)
    if strategy == MIXED and not problem.is_linear:
        raise StrategyError("the mixed strategy needs a linear state equation")
    arch = archive if archive is not None else StateArchive()
    if strategy == SIMULTANEOUS:
        Y, P, rs, ra = solve_simultaneous(problem, u, settings, arch.state, arch.adjoint)
    else:
        if state is None:
            state = solve_state(problem, u, settings, arch.state)
        Y, rs = state
        if strategy == MIXED:
            P, ra, arch.local_adjoint = solve_adjoint_mixed(problem, Y, settings, arch.local_adjoint)
        else:
            P, ra = solve_adjoint(problem, Y, settings, arch.adjoint)
    arch.state, arch.adjoint = Y, P
    J = problem_objective(problem, Y, u, settings)
    g = problem.objective.lam * u - P
    return GradientResult(g, J, Y, P, rs, ra)


def problem_objective(problem: ProblemDefinition, Y: np.ndarray, u: np.ndarray, settings: SolverSettings) -> float:
    rule = problem.hierarchy.fine.rule
    w = step_weights(settings.time_rule, rule.num_nodes, rule.weights)
    return objective_value(Y, u, problem.objective, problem.ops, problem.dt,
                           problem.decomposition(settings.num_workers), w)


class ReducedObjective:
    """Evaluator for :func:`pintopt.optimizer.optimize` backed by PDE solves.

    The last state solve is cached, so a gradient at an accepted line-search
    point reuses it.  With ``warm_start`` every solve starts from the
    trajectories of the previous one.
    """

    def __init__(self, problem: ProblemDefinition, strategy: str = STATE_THEN_ADJOINT,
                 settings: Optional[SolverSettings] = None, warm_start: bool = False):
        if strategy not in STRATEGIES:
            raise StrategyError(f"unknown strategy {strategy!r}")
        self.problem = problem
        self.strategy = strategy
        self.settings = settings or SolverSettings()
        if strategy == SEQUENTIAL:
            self.settings.num_workers = 1
        self.warm_start = warm_start
        self.archive = StateArchive()
        rule = problem.hierarchy.fine.rule
        self.weights = step_weights(self.settings.time_rule, rule.num_nodes, rule.weights)
        self.decomp: TimeDecomposition = problem.decomposition(self.settings.num_workers)
        self.state_sweeps = 0
        self.adjoint_sweeps = 0
        self.state_solves = 0
        self.adjoint_solves = 0
        self.all_converged = True
        self.last: Optional[GradientResult] = None
        self._key: Optional[np.ndarray] = None
        self._state: Optional[tuple[np.ndarray, SolveReport]] = None
        self._J = 0.0

    def control(self, values: Optional[np.ndarray] = None) -> ControlTrajectory:
        v = self.problem.zero_control() if values is None else np.array(values, dtype=float)
        return ControlTrajectory(v, self.decomp, self.weights, self.problem.ops)

    def _warm(self) -> StateArchive:
        return self.archive if self.warm_start else StateArchive()

    def _cached(self, u: ControlTrajectory) -> bool:
        return self._key is not None and np.array_equal(self._key, u.values)

    def value(self, u: ControlTrajectory) -> float:
        if self._cached(u):
            return self._J
        Y, rep = solve_state(self.problem, u.values, self.settings, self._warm().state)
        self.state_sweeps += rep.total_sweeps()
        self.state_solves += 1
        self.all_converged &= rep.converged
        if self.warm_start:
            self.archive.state = Y
        self._key, self._state = u.values.copy(), (Y, rep)
        self._J = problem_objective(self.problem, Y, u.values, self.settings)
        return self._J

    def gradient(self, u: ControlTrajectory) -> ControlTrajectory:
        arch = self._warm()
        if self.strategy == SIMULTANEOUS:
            if self._cached(u) and self.warm_start:
                arch.state = self._state[0]
            res = evaluate_gradient(self.problem, u.values, self.strategy, self.settings, arch)
            self.state_sweeps += res.state_report.total_sweeps()
            self.state_solves += 1
            self.all_converged &= res.state_report.converged
            self._key, self._state, self._J = u.values.copy(), (res.state, res.state_report), res.J
        else:
            self.value(u)
            res = evaluate_gradient(self.problem, u.values, self.strategy, self.settings, arch, self._state)
        self.adjoint_sweeps += res.adjoint_report.total_sweeps()
        self.adjoint_solves += 1
        self.all_converged &= res.adjoint_report.converged
        self.last = res
        return u.like(res.gradient)
