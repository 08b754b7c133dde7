"""Benchmark control problems: 3-D periodic heat and 1-D Nagumo.

All time-dependent data lives at the fine-level collocation nodes of every
step, as arrays of shape (N, fine nodes, *grid shape).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .field import GridSpec, SpatialField, load_snapshots, operators, save_snapshots
from .pfasst import Equation, Hierarchy, NonConvergenceError, TimeDecomposition, Tolerance, mlsdc_step
from .quadrature import lagrange_matrix
from .sweeper import CubicReaction

HEAT = "heat"
NAGUMO = "nagumo"


class MissingDataError(RuntimeError):
    pass


@dataclass
class ObjectiveSpec:
    """J = 1/2 int ||y - y_d||^2 + lam/2 int ||u||^2 + sigma/2 ||y(T) - y_d^T||^2."""

    lam: float
    target: np.ndarray  # (N, nodes, *shape)
    sigma: float = 0.0
    terminal_target: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lam < 0 or self.sigma < 0:
            raise ValueError("lam and sigma must be non-negative")
        if self.sigma > 0 and self.terminal_target is None:
            raise ValueError("sigma > 0 needs a terminal target")


@dataclass
class ProblemDefinition:
    name: str
    hierarchy: Hierarchy
    kappa: float
    y0: np.ndarray
    T: float
    num_steps: int
    objective: ObjectiveSpec
    reaction: Optional[CubicReaction] = None
    exact_control: Optional[np.ndarray] = None
    exact_state: Optional[np.ndarray] = None
    exact_adjoint: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    @property
    def grid(self) -> GridSpec:
        return self.hierarchy.fine.grid

    @property
    def ops(self):
        return operators(self.grid)

    @property
    def dt(self) -> float:
        return self.T / self.num_steps

    @property
    def is_linear(self) -> bool:
        return self.reaction is None

    @property
    def node_shape(self) -> tuple:
        return (self.num_steps, self.hierarchy.fine.rule.num_nodes) + self.grid.shape

    def node_times(self) -> np.ndarray:
        """Times of all fine nodes, shape (N, nodes)."""
        j = np.arange(self.num_steps)[:, None]
        return (j + self.hierarchy.fine.rule.nodes[None, :]) * self.dt

    def decomposition(self, num_workers: int, reflected: bool = False) -> TimeDecomposition:
        return TimeDecomposition(self.num_steps, num_workers, self.T, 0.0, reflected)

    def zero_control(self) -> np.ndarray:
        return np.zeros(self.node_shape)

    # -- equations --------------------------------------------------------------
    def state_equation(self, u: np.ndarray, hierarchy: Optional[Hierarchy] = None) -> Equation:
        return Equation(hierarchy or self.hierarchy, self.kappa, source=lambda i: u[i], reaction=self.reaction)

    def reaction_derivative(self, y: np.ndarray) -> Optional[np.ndarray]:
        if self.reaction is None:
            return None
        return self.reaction.derivative(0, y)

    def adjoint_equation(self, Y: np.ndarray, hierarchy: Optional[Hierarchy] = None) -> Equation:
        """Adjoint in reflected time s = T - t, indexed by reflected step.

        Reflected step i is time step N-1-i with node order reversed; the
        Lobatto nodes are symmetric so the archived state needs no
        interpolation.
        """
        N = self.num_steps
        yd = self.objective.target

        def source(i):
            j = N - 1 - i
            return -(Y[j] - yd[j])[::-1]

        coefficient = None
        if self.reaction is not None:
            def coefficient(i):
                return self.reaction_derivative(Y[N - 1 - i])[::-1]
        return Equation(hierarchy or self.hierarchy, self.kappa, source=source, coefficient=coefficient)

    def adjoint_initial(self, y_end: np.ndarray) -> np.ndarray:
        """p(T) = -sigma (y(T) - y_d^T), the initial value in reflected time."""
        if self.objective.sigma == 0.0:
            return np.zeros(self.grid.shape)
        return -self.objective.sigma * (y_end - self.objective.terminal_target)


def unreflect(Q: np.ndarray) -> np.ndarray:
    """Reflected-step node data back to forward time order."""
    return Q[::-1, ::-1].copy()


def _sines(grid: GridSpec) -> np.ndarray:
    x, y, z = grid.coordinates()
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.sin(2 * np.pi * z)


def make_heat_problem(hierarchy: Hierarchy, lam: float = 0.05, T: float = 2.0, num_steps: int = 20,
                      initial_value: str = "consistent") -> ProblemDefinition:
    """y_t - Lap(y) = u on the periodic unit cube with a manufactured optimum.

    With S = prod sin(2 pi x_i) and c = 12 pi^2 the optimal triple is
    p = -(T - t) S, u = -(T - t) S / lam and
    y = [(t - T) / (c lam) - 1 / (c^2 lam)] S.  ``initial_value="consistent"``
    starts from y(0) of that triple; ``"published"`` uses
    (1 - T) S / (c lam), for which the triple is not optimal.
    """
    grid = hierarchy.fine.grid
    if grid.dims != 3 or grid.basis != "periodic":
        raise ValueError("the heat problem lives on a periodic 3-D grid")
    if lam <= 0:
        raise ValueError("lam must be positive")
    c = 12 * np.pi ** 2
    S = _sines(grid)
    j = np.arange(num_steps)[:, None]
    t = (j + hierarchy.fine.rule.nodes[None, :]) * (T / num_steps)
    tt = t[:, :, None, None, None]

    def state_coef(time):
        return (time - T) / (c * lam) - 1.0 / (c * c * lam)

    target = ((c + 1.0 / (c * lam)) * (tt - T) - (1.0 + 1.0 / (c * c * lam))) * S
    if initial_value == "consistent":
        y0 = state_coef(0.0) * S
    elif initial_value == "published":
        y0 = (1.0 - T) / (c * lam) * S
    else:
        raise ValueError(f"unknown initial_value {initial_value!r}")
    return ProblemDefinition(
        name=HEAT, hierarchy=hierarchy, kappa=1.0, y0=y0, T=T, num_steps=num_steps,
        objective=ObjectiveSpec(lam=lam, target=target),
        exact_control=-(T - tt) * S / lam,
        exact_state=state_coef(tt) * S,
        exact_adjoint=-(T - tt) * S,
        params={"lam": lam, "T": T, "num_steps": num_steps, "initial_value": initial_value},
    )


@dataclass
class NodeSeries:
    """Values at the collocation nodes of consecutive steps, with dense output."""

    t0: float
    dt: float
    nodes: np.ndarray
    values: np.ndarray  # (N, nodes, *shape)

    def at(self, t: float) -> np.ndarray:
        N = self.values.shape[0]
        s = (t - self.t0) / self.dt
        j = int(np.clip(np.floor(s), 0, N - 1))
        tau = s - j
        w = lagrange_matrix(self.nodes, [tau])[0]
        return np.tensordot(w, self.values[j], axes=1)

    def save(self, path, grid: GridSpec) -> None:
        recs = []
        for j in range(self.values.shape[0]):
            for m, tau in enumerate(self.nodes):
                recs.append((self.t0 + (j + tau) * self.dt, SpatialField(grid, self.values[j, m])))
        save_snapshots(path, recs)

    @classmethod
    def load(cls, path, num_steps: int, nodes: np.ndarray, t0: float, dt: float) -> "NodeSeries":
        recs = load_snapshots(path)
        if len(recs) != num_steps * len(nodes):
            raise MissingDataError(f"{path} holds {len(recs)} records, expected {num_steps * len(nodes)}")
        vals = np.array([f.values for _, f in recs]).reshape((num_steps, len(nodes)) + recs[0][1].grid.shape)
        return cls(t0, dt, np.asarray(nodes), vals)


def nagumo_initial(grid: GridSpec) -> np.ndarray:
    # pointwise sampling of the step; no smoothing
    (x,) = grid.coordinates()
    return np.where(x <= 9.0, 1.2 * np.sqrt(3.0), 0.0)


def compute_y_nat(hierarchy: Hierarchy, gamma: float, T: float = 5.0, num_steps: int = 32,
                  tol: float = 1e-12, max_iters: int = 200, cache: Optional[Path] = None) -> NodeSeries:
    """Uncontrolled Nagumo trajectory by sequential MLSDC, optionally cached on disk."""
    fine = hierarchy.fine
    dt = T / num_steps
    if cache is not None and Path(cache).exists():
        series = NodeSeries.load(cache, num_steps, fine.rule.nodes, 0.0, dt)
        if series.values.shape[2:] == fine.grid.shape:
            return series
    eq = Equation(hierarchy, 1.0, reaction=CubicReaction(gamma))
    y = nagumo_initial(fine.grid)
    vals = np.empty((num_steps, fine.rule.num_nodes) + fine.grid.shape)
    for j in range(num_steps):
        Yj, rec = mlsdc_step(hierarchy, eq, j, y, dt, Tolerance(tol, tol, max_iters))
        if not rec.converged:
            raise NonConvergenceError(f"y_nat step {j} did not converge (residual {rec.residual:.2e})")
        vals[j] = Yj
        y = Yj[-1]
    series = NodeSeries(0.0, dt, fine.rule.nodes.copy(), vals)
    if cache is not None:
        Path(cache).parent.mkdir(parents=True, exist_ok=True)
        series.save(cache, fine.grid)
    return series


def nagumo_exact_control(y_switch: np.ndarray, grid: GridSpec, gamma: float) -> np.ndarray:
    """The control freezing the state at y_switch: r(y) - y_xx."""
    return gamma / 3.0 * y_switch ** 3 - y_switch - operators(grid).laplacian(y_switch)


def make_nagumo_problem(hierarchy: Hierarchy, gamma: float = 1.0, lam: float = 1e-6, T: float = 5.0,
                        num_steps: int = 32, t_switch: float = 2.5, y_nat: Optional[NodeSeries] = None,
                        y_nat_tol: float = 1e-12, cache: Optional[Path] = None) -> ProblemDefinition:
    """y_t - y_xx + (gamma/3) y^3 - y = u on (0, 20) with homogeneous Neumann conditions.

    The target follows the uncontrolled trajectory until ``t_switch`` and is
    frozen afterwards.  Steps starting at or after ``t_switch`` take the
    frozen branch at all their nodes.
    """
    grid = hierarchy.fine.grid
    if grid.dims != 1 or grid.basis != "neumann":
        raise ValueError("the Nagumo problem lives on a 1-D cosine grid")
    if y_nat is None:
        y_nat = compute_y_nat(hierarchy, gamma, T, num_steps, y_nat_tol, cache=cache)
    if y_nat.values.shape[2:] != grid.shape or y_nat.values.shape[0] != num_steps:
        raise MissingDataError("y_nat does not match the problem discretization")
    dt = T / num_steps
    y_sw = y_nat.at(t_switch)
    step_start = np.arange(num_steps) * dt
    frozen = step_start >= t_switch - 1e-12
    target = y_nat.values.copy()
    target[frozen] = y_sw
    u_sw = nagumo_exact_control(y_sw, grid, gamma)
    exact = np.zeros_like(target)
    exact[frozen] = u_sw
    return ProblemDefinition(
        name=NAGUMO, hierarchy=hierarchy, kappa=1.0, y0=nagumo_initial(grid), T=T, num_steps=num_steps,
        objective=ObjectiveSpec(lam=lam, target=target), reaction=CubicReaction(gamma),
        exact_control=exact,
        params={"gamma": gamma, "lam": lam, "T": T, "num_steps": num_steps, "t_switch": t_switch,
                "y_nat": y_nat},
    )


# -- objective --------------------------------------------------------------------

def step_weights(rule_name: str, num_nodes: int, quad_weights: np.ndarray) -> np.ndarray:
    """Per-node weights of the time quadrature over one unit step."""
    if rule_name == "collocation":
        return np.asarray(quad_weights, dtype=float)
    if rule_name == "trapezoid":
        w = np.zeros(num_nodes)
        w[0] = w[-1] = 0.5
        return w
    if rule_name == "rectangle":
        if num_nodes != 1:
            raise ValueError("rectangle rule is for one value per step")
        return np.ones(1)
    raise ValueError(f"unknown time rule {rule_name!r}")


def reduce_in_worker_order(per_step: Sequence[float], decomp: TimeDecomposition) -> float:
    """Sum per-step contributions the way workers would: owned steps first, then workers 0..R-1."""
    partial = [0.0] * decomp.num_workers
    for i, v in enumerate(per_step):
        partial[decomp.owner(i)] += v
    total = 0.0
    for p in partial:
        total += p
    return total


def objective_value(Y: np.ndarray, U: np.ndarray, objective: ObjectiveSpec, ops, dt: float,
                    decomp: TimeDecomposition, weights: np.ndarray) -> float:
    """Objective from node data using per-step node weights (one scalar per worker)."""
    lam = objective.lam
    per_step = []
    for j in range(Y.shape[0]):
        s = 0.0
        for m, w in enumerate(weights):
            if w == 0.0:
                continue
            e = Y[j, m] - objective.target[j, m]
            s += w * (0.5 * ops.inner(e, e) + 0.5 * lam * ops.inner(U[j, m], U[j, m]))
        per_step.append(dt * s)
    J = reduce_in_worker_order(per_step, decomp)
    if objective.sigma > 0:
        e = Y[-1, -1] - objective.terminal_target
        J += 0.5 * objective.sigma * ops.inner(e, e)
    return J
