"""First-order IMEX-Euler reference for the Nagumo control problem.

Control and target are constant on each step.  The state recursion is

    y_{n+1} = A (y_n + dt (u_n - r(y_n))),   A = (I - dt kappa Lap)^{-1},

and J = dt * sum_n [ |y_{n+1} - yd_n|^2 / 2 + lam |u_n|^2 / 2 ].  The adjoint
below is the exact discrete adjoint of this recursion, so the gradient
lam*u_n - p_n is exact for the discrete objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..field import operators
from ..optimizer import ControlTrajectory, History, OptimizerConfig, optimize
from ..pfasst import TimeDecomposition
from ..problems import NodeSeries, ProblemDefinition, nagumo_exact_control


class NonFiniteStateError(FloatingPointError):
    pass


@dataclass
class ImexEulerModel:
    problem: ProblemDefinition
    dt: float
    num_steps: int
    target: np.ndarray  # (N, *grid), paired with y_{n+1}
    exact_control: np.ndarray  # (N, 1, *grid)

    @property
    def ops(self):
        return operators(self.problem.grid)

    def decomposition(self) -> TimeDecomposition:
        return TimeDecomposition(self.num_steps, 1, self.problem.T)

    def control(self, values: Optional[np.ndarray] = None) -> ControlTrajectory:
        v = np.zeros((self.num_steps, 1) + self.problem.grid.shape) if values is None else values
        return ControlTrajectory(v, self.decomposition(), np.ones(1), self.ops)

    def state(self, u: np.ndarray) -> np.ndarray:
        """States y_1..y_N, shape (N, *grid)."""
        P, ops, dt = self.problem, self.ops, self.dt
        y = P.y0.copy()
        Y = np.empty((self.num_steps,) + y.shape)
        # overflow is reported below as a blow-up, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            for n in range(self.num_steps):
                y = ops.solve(y + dt * (u[n, 0] - P.reaction.value(0, y)), dt, P.kappa)
                Y[n] = y
        if not np.all(np.isfinite(Y)):
            raise NonFiniteStateError("IMEX-Euler state blew up; reduce the step size")
        return Y

    def adjoint(self, Y: np.ndarray) -> np.ndarray:
        """p_0..p_{N-1} with p_N = 0 and p_{n-1} = A(p_n - dt (c_n p_n + y_n - yd_n))."""
        P, ops, dt = self.problem, self.ops, self.dt
        p = np.zeros(P.grid.shape)
        out = np.empty_like(Y)
        for n in range(self.num_steps, 0, -1):
            c = P.reaction.derivative(0, Y[n - 1])
            p = ops.solve(p - dt * (c * p + Y[n - 1] - self.target[n - 1]), dt, P.kappa)
            out[n - 1] = p
        return out

    def objective(self, Y: np.ndarray, u: np.ndarray) -> float:
        ops, lam = self.ops, self.problem.objective.lam
        total = 0.0
        for n in range(self.num_steps):
            e = Y[n] - self.target[n]
            total += self.dt * (0.5 * ops.inner(e, e) + 0.5 * lam * ops.inner(u[n, 0], u[n, 0]))
        return total


def build_imex_euler_model(problem: ProblemDefinition, dt: float) -> ImexEulerModel:
    """Step-constant data for the baseline from a Nagumo problem definition."""
    y_nat: NodeSeries = problem.params.get("y_nat")
    if y_nat is None or problem.reaction is None:
        raise ValueError("the IMEX-Euler baseline needs a Nagumo problem with y_nat")
    N = int(round(problem.T / dt))
    if N < 1 or abs(N * dt - problem.T) > 1e-9 * problem.T:
        raise ValueError("dt must divide T")
    t_sw = problem.params["t_switch"]
    y_sw = y_nat.at(t_sw)
    t_end = np.arange(1, N + 1) * dt
    target = np.array([y_nat.at(t) if t < t_sw else y_sw for t in t_end])
    u_sw = nagumo_exact_control(y_sw, problem.grid, problem.params["gamma"])
    exact = np.zeros((N, 1) + problem.grid.shape)
    exact[np.arange(N) * dt >= t_sw - 1e-12, 0] = u_sw
    return ImexEulerModel(problem, dt, N, target, exact)


class ImexEulerObjective:
    """Evaluator for :func:`pintopt.optimizer.optimize`; one sweep per step."""

    def __init__(self, model: ImexEulerModel):
        self.model = model
        self.state_sweeps = 0
        self.adjoint_sweeps = 0
        self._key = None
        self._Y = None
        self._J = 0.0

    def value(self, u: ControlTrajectory) -> float:
        if self._key is not None and np.array_equal(self._key, u.values):
            return self._J
        Y = self.model.state(u.values)
        self.state_sweeps += self.model.num_steps
        self._key, self._Y = u.values.copy(), Y
        self._J = self.model.objective(Y, u.values)
        return self._J

    def gradient(self, u: ControlTrajectory) -> ControlTrajectory:
        self.value(u)
        p = self.model.adjoint(self._Y)
        self.adjoint_sweeps += self.model.num_steps
        return u.like(self.model.problem.objective.lam * u.values - p[:, None])


def run_imex_euler_baseline(problem: ProblemDefinition, dt: float,
                            config: OptimizerConfig = OptimizerConfig("ncg", "dy", max_iters=200),
                            callback=None) -> tuple[ControlTrajectory, History, ImexEulerModel]:
    model = build_imex_euler_model(problem, dt)
    ev = ImexEulerObjective(model)
    u, hist = optimize(model.control(), ev, config, callback)
    return u, hist, model


def control_error(u: ControlTrajectory, exact: np.ndarray) -> float:
    e = u.like(exact)
    return (u - e).norm() / e.norm()
