"""Single-level SDC sweeps over one time step.

The right-hand side has the split form

    F(t, y) = kappa * Lap(y) - r(y) + s(t)

with an implicit linear diffusion part, an optional pointwise reaction
``r`` and a data source ``s`` sampled at the collocation nodes.  IMEX
sweeps treat ``r`` explicitly; MISDC sweeps split diffusion and reaction
into two implicit substeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .field import GridSpec, SpectralOps, operators
from .quadrature import (QuadratureRule, apply_nodes, node_interpolation_matrix,
                         node_restriction_matrix)

IMEX = "imex"
MISDC_LAGGED = "misdc_lagged"
MISDC_NEWTON = "misdc_newton"
SWEEPER_KINDS = (IMEX, MISDC_LAGGED, MISDC_NEWTON)


class NewtonError(RuntimeError):
    pass


class Reaction(Protocol):
    def value(self, m: int, y: np.ndarray) -> np.ndarray: ...
    def derivative(self, m: int, y: np.ndarray) -> np.ndarray: ...
    def lagged(self, m: int, ystar: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class CubicReaction:
    """Nagumo reaction r(y) = (gamma/3) y^3 - y."""

    gamma: float

    def value(self, m, y):
        return y * (self.gamma / 3.0 * y * y - 1.0)

    def derivative(self, m, y):
        return self.gamma * y * y - 1.0

    def lagged(self, m, ystar):
        # r(y) ~ y * ((gamma/3) ystar^2 - 1)
        return self.gamma / 3.0 * ystar * ystar - 1.0


@dataclass(frozen=True, eq=False)
class LinearReaction:
    """r(y) = c_m * y with a node-dependent coefficient field."""

    coef: np.ndarray  # (num_nodes, *shape)

    def value(self, m, y):
        return self.coef[m] * y

    def derivative(self, m, y):
        return self.coef[m]

    def lagged(self, m, ystar):
        return self.coef[m]


@dataclass(eq=False)
class RhsSplit:
    ops: SpectralOps
    kappa: float
    source: Optional[np.ndarray] = None  # (num_nodes, *shape)
    reaction: Optional[Reaction] = None

    def lin(self, y: np.ndarray) -> np.ndarray:
        return self.kappa * self.ops.laplacian(y)

    def react(self, m: int, y: np.ndarray) -> np.ndarray:
        if self.reaction is None:
            return np.zeros_like(y)
        return -self.reaction.value(m, y)

    def src(self, m: int) -> np.ndarray:
        if self.source is None:
            return np.zeros(self.ops.shape)
        return self.source[m]

    def full(self, m: int, y: np.ndarray) -> np.ndarray:
        return self.lin(y) + self.react(m, y) + self.src(m)


@dataclass(eq=False)
class NodeTrajectory:
    """Node values and per-part function evaluations of one step on one level."""

    ops: SpectralOps
    y: np.ndarray
    f_lin: np.ndarray
    f_react: np.ndarray
    f_src: np.ndarray
    tau: Optional[np.ndarray] = None
    step_index: int = 0
    t0: float = 0.0
    t1: float = 0.0
    residual_norm: float = field(default=np.inf)

    @classmethod
    def spread(cls, y0: np.ndarray, rule: QuadratureRule, rhs: RhsSplit, **kw) -> "NodeTrajectory":
        y = np.broadcast_to(y0, (rule.num_nodes,) + y0.shape).copy()
        return cls.from_values(y, rhs, **kw)

    @classmethod
    def from_values(cls, y: np.ndarray, rhs: RhsSplit, **kw) -> "NodeTrajectory":
        z = np.zeros_like(y)
        traj = cls(rhs.ops, np.array(y, dtype=float), z, z.copy(), z.copy(), **kw)
        traj.evaluate(rhs)
        return traj

    @property
    def num_nodes(self) -> int:
        return self.y.shape[0]

    @property
    def end(self) -> np.ndarray:
        return self.y[-1]

    def f_total(self) -> np.ndarray:
        return self.f_lin + self.f_react + self.f_src

    def evaluate(self, rhs: RhsSplit, nodes=None) -> None:
        if nodes is None:
            # all nodes at once; reactions index their node data with a slice
            self.f_lin[:] = rhs.lin(self.y)
            self.f_react[:] = rhs.react(slice(None), self.y)
            self.f_src[:] = 0.0 if rhs.source is None else rhs.source
            return
        for m in nodes:
            self.f_lin[m] = rhs.lin(self.y[m])
            self.f_react[m] = rhs.react(m, self.y[m])
            self.f_src[m] = rhs.src(m)

    def set_initial(self, y0: np.ndarray, rhs: RhsSplit) -> None:
        self.y[0] = y0
        self.evaluate(rhs, nodes=(0,))

    def copy(self) -> "NodeTrajectory":
        return NodeTrajectory(self.ops, self.y.copy(), self.f_lin.copy(), self.f_react.copy(),
                              self.f_src.copy(), None if self.tau is None else self.tau.copy(),
                              self.step_index, self.t0, self.t1, self.residual_norm)


def _check_rule(traj: NodeTrajectory, rule: QuadratureRule):
    if traj.num_nodes != rule.num_nodes:
        raise ValueError("trajectory and quadrature rule disagree on the node count")


def _sweep(traj, y0, rule, rhs, dt, kind):
    _check_rule(traj, rule)
    Q, QI, QE = rule.Q, rule.QI, rule.QE
    old_lin = traj.f_lin.copy()
    old_react = traj.f_react.copy()
    integral = dt * apply_nodes(Q, traj.f_total())
    if traj.tau is not None:
        integral += traj.tau
    base = y0 + integral

    traj.set_initial(y0, rhs)
    d_lin = traj.f_lin - old_lin
    d_react = traj.f_react - old_react
    react_matrix = QE if kind == IMEX else QI

    shape = base.shape[1:]
    flat_lin = d_lin.reshape(rule.num_nodes, -1)
    flat_react = d_react.reshape(rule.num_nodes, -1)
    for m in range(1, rule.num_nodes):
        a = dt * QI[m, m]
        b = base[m] + dt * (QI[m, :m] @ flat_lin[:m] + react_matrix[m, :m] @ flat_react[:m]).reshape(shape)
        b -= a * old_lin[m]
        # diffusion stage keeps the reaction at its old value
        ystar = rhs.ops.solve(b, a, rhs.kappa)
        if kind == IMEX or rhs.reaction is None:
            traj.y[m] = ystar
            # kappa*Lap(y) read off the implicit equation, saving two transforms
            traj.f_lin[m] = (ystar - b) / a
            traj.f_react[m] = rhs.react(m, ystar)
            traj.f_src[m] = rhs.src(m)
        else:
            # y + a r(y) = ystar - a F_react^k
            c = ystar - a * old_react[m]
            if kind == MISDC_LAGGED:
                traj.y[m] = c / (1.0 + a * rhs.reaction.lagged(m, ystar))
            else:
                traj.y[m] = newton_reaction_solve(a, c, traj.y[m], rhs.reaction, m)
            traj.evaluate(rhs, nodes=(m,))
        d_lin[m] = traj.f_lin[m] - old_lin[m]
        d_react[m] = traj.f_react[m] - old_react[m]

    traj.residual_norm = residual(traj, y0, rule, dt)
    return traj


def sweep_imex(traj: NodeTrajectory, y0: np.ndarray, rule: QuadratureRule, rhs: RhsSplit,
               dt: float) -> NodeTrajectory:
    """One in-place IMEX sweep: diffusion with ``QI``, reaction with ``QE``."""
    return _sweep(traj, y0, rule, rhs, dt, IMEX)


def sweep_misdc(traj: NodeTrajectory, y0: np.ndarray, rule: QuadratureRule, rhs: RhsSplit,
                dt: float, mode: str = "lagged") -> NodeTrajectory:
    """One in-place multi-implicit sweep (diffusion solve, then reaction correction).

    ``mode="lagged"`` linearises the reaction around the diffusion stage value,
    ``mode="newton"`` solves the pointwise nonlinear reaction equation.
    """
    kind = {"lagged": MISDC_LAGGED, "newton": MISDC_NEWTON}[mode]
    return _sweep(traj, y0, rule, rhs, dt, kind)


def sweep(kind: str, traj, y0, rule, rhs, dt) -> NodeTrajectory:
    if kind not in SWEEPER_KINDS:
        raise ValueError(f"unknown sweeper {kind!r}")
    return _sweep(traj, y0, rule, rhs, dt, kind)


def newton_reaction_solve(a: float, b: np.ndarray, y_init: np.ndarray, reaction: Reaction, m: int,
                          tol: float = 1e-12, max_iter: int = 50, max_halvings: int = 8) -> np.ndarray:
    """Solve y + a*r(y) = b pointwise by damped Newton.

    Steps are halved until the simplified Newton correction (old Jacobian,
    new residual) is smaller than the ordinary correction.
    """
    y = np.array(y_init, dtype=float, copy=True)
    for _ in range(max_iter):
        g = y + a * reaction.value(m, y) - b
        jac = 1.0 + a * reaction.derivative(m, y)
        dy = -g / jac
        ndy = np.abs(dy)
        if np.all(ndy < tol):
            return y + dy
        lam = np.ones_like(y)
        active = np.ones(y.shape, dtype=bool)
        trial = y + dy
        for _ in range(max_halvings):
            gt = trial + a * reaction.value(m, trial) - b
            simplified = np.abs(gt / jac)
            bad = active & (simplified > (1.0 - lam / 4.0) * ndy) & (ndy > tol)
            if not bad.any():
                break
            lam = np.where(bad, 0.5 * lam, lam)
            active = bad
            trial = y + lam * dy
        y = trial
    g = y + a * reaction.value(m, y) - b
    worst = int(np.argmax(np.abs(g)))
    raise NewtonError(f"Newton did not converge at node {m}, point {np.unravel_index(worst, y.shape)}")


def residual(traj: NodeTrajectory, y0: np.ndarray, rule: QuadratureRule, dt: float) -> float:
    """Max over nodes of the L2 norm of the collocation defect."""
    defect = y0 + dt * apply_nodes(rule.Q, traj.f_total()) - traj.y
    if traj.tau is not None:
        defect += traj.tau
    return float(np.max(traj.ops.norms(defect)))


class LevelTransfer:
    """Space-time transfer between a fine and the next coarser level."""

    def __init__(self, fine_grid: GridSpec, fine_rule: QuadratureRule,
                 coarse_grid: GridSpec, coarse_rule: QuadratureRule):
        self.fine_grid, self.coarse_grid = fine_grid, coarse_grid
        self.fine_rule, self.coarse_rule = fine_rule, coarse_rule
        self.fine_ops, self.coarse_ops = operators(fine_grid), operators(coarse_grid)
        self.P_t = node_interpolation_matrix(fine_rule, coarse_rule)
        self.R_t = node_restriction_matrix(fine_rule, coarse_rule)
        # node integrals are restricted like node values; integrating the fine
        # interpolant up to non-nested coarse nodes breaks FAS consistency
        self.R_Q = self.R_t @ fine_rule.Q

    def restrict_field(self, a: np.ndarray) -> np.ndarray:
        return self.fine_ops.transfer(a, self.coarse_grid)

    def interpolate_field(self, a: np.ndarray) -> np.ndarray:
        return self.coarse_ops.transfer(a, self.fine_grid)

    def restrict_nodes(self, values: np.ndarray) -> np.ndarray:
        """(fine nodes, fine grid) -> (coarse nodes, coarse grid)."""
        return self.restrict_field(apply_nodes(self.R_t, values))

    def interpolate_nodes(self, values: np.ndarray) -> np.ndarray:
        """(coarse nodes, coarse grid) -> (fine nodes, fine grid)."""
        return apply_nodes(self.P_t, self.interpolate_field(values))

    def restrict_integral(self, f_fine: np.ndarray) -> np.ndarray:
        """Node-to-node integrals of fine evaluations, seen at coarse nodes."""
        return self.restrict_field(apply_nodes(self.R_Q, f_fine))


def fas_tau(fine: NodeTrajectory, coarse: NodeTrajectory, transfer: LevelTransfer, dt: float) -> np.ndarray:
    """FAS correction making the coarse collocation problem consistent with the fine one.

    With the defect convention ``y0 + dt*Q F + tau - y``, the coarse forcing is
    dt*[R(Q_f F_f) - Q_c F_c(R y_f)] + R tau_f.  ``coarse`` must already hold
    the restricted fine solution and matching evaluations.
    """
    if coarse.num_nodes != transfer.coarse_rule.num_nodes or fine.num_nodes != transfer.fine_rule.num_nodes:
        raise ValueError("trajectories do not match the transfer levels")
    tau = dt * (transfer.restrict_integral(fine.f_total())
                - apply_nodes(transfer.coarse_rule.Q, coarse.f_total()))
    if fine.tau is not None:
        tau += transfer.restrict_nodes(fine.tau)
    coarse.tau = tau
    return tau
