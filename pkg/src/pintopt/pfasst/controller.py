"""MLSDC steps and the pipelined PFASST solve.

One :class:`StepSolver` owns the level trajectories of one time step.  The
same object drives sequential MLSDC (no neighbours) and a pipeline position
in PFASST (neighbours reached through a :class:`PipelineLink`), so a run on
one worker is bitwise identical to stepping MLSDC sequentially.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..sweeper import NodeTrajectory, RhsSplit, fas_tau, residual, sweep
from .comm import Endpoint, run_workers
from .hierarchy import Equation, Hierarchy, TimeDecomposition


class NonConvergenceError(RuntimeError):
    """Raised when a step exhausts its iteration budget in strict mode."""


def convergence_rule(residual_norm: float, predecessor_converged: bool, atol: float,
                     rtol: Optional[float] = None, reference_norm: float = 0.0) -> bool:
    """A step has converged once its own residual is small and its predecessor is done.

    The residual is small if it is below ``atol`` or, relative to
    ``reference_norm`` (the step's initial value), below ``rtol``.
    """
    if not predecessor_converged:
        return False
    if residual_norm < atol:
        return True
    rtol = atol if rtol is None else rtol
    return reference_norm > 0.0 and residual_norm / reference_norm < rtol


@dataclass
class Tolerance:
    atol: float = 1e-10
    rtol: Optional[float] = None
    max_iters: int = 100


@dataclass
class StepRecord:
    step: int
    iterations: int
    sweeps: list[int]
    residual: float
    converged: bool


@dataclass
class SolveReport:
    """Per-step outcome of a solve; levels are indexed coarse -> fine."""

    records: list[StepRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.records)

    @property
    def num_levels(self) -> int:
        return len(self.records[0].sweeps) if self.records else 0

    def sweeps(self, level: int = -1) -> list[int]:
        return [r.sweeps[level] for r in self.records]

    def mean_sweeps(self, level: int = -1) -> float:
        return float(np.mean(self.sweeps(level))) if self.records else 0.0

    def total_sweeps(self, level: int = -1) -> int:
        return int(sum(self.sweeps(level)))

    def max_sweeps(self, level: int = -1) -> int:
        return max(self.sweeps(level)) if self.records else 0

    @property
    def iterations(self) -> list[int]:
        return [r.iterations for r in self.records]

    @property
    def final_residual(self) -> float:
        return max((r.residual for r in self.records), default=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "level", "sweeps", "residual", "converged"])
            for r in self.records:
                for lev, s in enumerate(r.sweeps):
                    w.writerow([r.step, lev, s, f"{r.residual:.6e}", int(r.converged)])


class PipelineLink:
    """Tagged sends/receives to the neighbouring pipeline positions of one step."""

    def __init__(self, endpoint: Optional[Endpoint], channel: str, block: int,
                 prev_rank: Optional[int], next_rank: Optional[int]):
        self.endpoint = endpoint
        self.channel = channel
        self.block = block
        self.prev_rank = prev_rank
        self.next_rank = next_rank

    @property
    def has_prev(self) -> bool:
        return self.prev_rank is not None

    @property
    def has_next(self) -> bool:
        return self.next_rank is not None

    def send(self, kind: str, k: int, payload) -> None:
        if self.next_rank is not None:
            self.endpoint.send(self.next_rank, (self.channel, kind, self.block, k), payload)

    def recv(self, kind: str, k: int):
        return self.endpoint.recv(self.prev_rank, (self.channel, kind, self.block, k))


NO_LINK = PipelineLink(None, "", 0, None, None)


class StepSolver:
    """Multilevel SDC iteration for one step, optionally inside a pipeline.

    ``y0`` is the fine initial value when the step is first in its block
    (or sequential); a step with a predecessor receives its initial values.
    """

    def __init__(self, hierarchy: Hierarchy, equation: Equation, step: int, dt: float,
                 link: PipelineLink = NO_LINK, tol: Tolerance = Tolerance(),
                 predictor_sweeps: int = 1):
        self.h = hierarchy
        self.equation = equation
        self.step = step
        self.dt = dt
        self.link = link
        self.tol = tol
        self.predictor_sweeps = predictor_sweeps
        L = len(hierarchy)
        self.rhs: list[RhsSplit] = [equation.rhs(step, l) for l in range(L)]
        self.traj: list[Optional[NodeTrajectory]] = [None] * L
        self.y0: list[Optional[np.ndarray]] = [None] * L
        self._restricted: list[Optional[np.ndarray]] = [None] * L
        self.sweep_counts = [0] * L
        self.iterations = 0
        self.pred_done = not link.has_prev
        self.converged = False
        self.residual = np.inf

    # -- building blocks ------------------------------------------------------
    @property
    def fine(self) -> NodeTrajectory:
        return self.traj[-1]

    def refresh_rhs(self, rhs: Sequence[RhsSplit]) -> None:
        """Swap in new right-hand sides (e.g. updated data) and re-evaluate."""
        self.rhs = list(rhs)
        for l, tr in enumerate(self.traj):
            if tr is not None:
                tr.evaluate(self.rhs[l])

    def _sweep(self, l: int, count: int) -> None:
        spec = self.h.levels[l]
        for _ in range(count):
            sweep(spec.sweeper_kind, self.traj[l], self.y0[l], spec.rule, self.rhs[l], self.dt)
            self.sweep_counts[l] += 1

    def _restrict(self, l: int) -> None:
        """Fine level l+1 -> coarse level l with FAS correction."""
        T = self.h.transfers[l]
        yc = T.restrict_nodes(self.traj[l + 1].y)
        self.traj[l] = NodeTrajectory.from_values(yc, self.rhs[l], step_index=self.step)
        fas_tau(self.traj[l + 1], self.traj[l], T, self.dt)
        self._restricted[l] = yc.copy()
        self.y0[l] = T.restrict_field(self.y0[l + 1])

    def _interpolate(self, l: int) -> None:
        """Coarse correction from level l-1 added to level l."""
        T = self.h.transfers[l - 1]
        delta = self.traj[l - 1].y - self._restricted[l - 1]
        tr = self.traj[l]
        tr.y += T.interpolate_nodes(delta)
        tr.evaluate(self.rhs[l])
        self.y0[l] = tr.y[0].copy()

    def _set_fine_initial(self, y0: np.ndarray) -> None:
        self.y0[-1] = np.array(y0, dtype=float)
        self.fine.set_initial(self.y0[-1], self.rhs[-1])

    # -- phases ---------------------------------------------------------------
    def predict(self, y0: Optional[np.ndarray] = None, warm: Optional[np.ndarray] = None) -> None:
        """Initial guess: coarse serial sweeps, or a restricted warm start.

        ``warm`` holds stored fine node values for this step.
        """
        L = len(self.h)
        if warm is None:
            if y0 is not None:
                y0c = self.h.restrict_field_to(y0, 0)
            else:
                y0c = self.link.recv("coarse", 0)
            self.y0[0] = y0c
            self.traj[0] = NodeTrajectory.spread(y0c, self.h.levels[0].rule, self.rhs[0], step_index=self.step)
            self._sweep(0, self.predictor_sweeps)
            self.link.send("coarse", 0, self.traj[0].end)
            for l in range(1, L):
                T = self.h.transfers[l - 1]
                self.traj[l] = NodeTrajectory.from_values(T.interpolate_nodes(self.traj[l - 1].y),
                                                          self.rhs[l], step_index=self.step)
                self.y0[l] = self.traj[l].y[0].copy()
            if y0 is not None:
                self._set_fine_initial(y0)
        else:
            self.traj[-1] = NodeTrajectory.from_values(np.array(warm, dtype=float), self.rhs[-1],
                                                       step_index=self.step)
            self.y0[-1] = self.fine.y[0].copy()
            if y0 is not None:
                self._set_fine_initial(y0)
            for l in range(L - 2, -1, -1):
                self._restrict(l)
            if L > 1:
                if self.link.has_prev:
                    y0c = self.link.recv("coarse", 0)
                    self.y0[0] = y0c
                    self.traj[0].set_initial(y0c, self.rhs[0])
                self._sweep(0, self.predictor_sweeps)
                self.link.send("coarse", 0, self.traj[0].end)
                for l in range(1, L):
                    self._interpolate(l)
            else:
                # single level: nothing coarser to correct with
                if self.link.has_prev:
                    self._set_fine_initial(self.link.recv("coarse", 0))
                self.link.send("coarse", 0, self.fine.end)
        self.residual = residual(self.fine, self.y0[-1], self.h.fine.rule, self.dt)

    def iterate(self, data_final: bool = True) -> bool:
        """One V-cycle with neighbour exchange; returns the convergence flag.

        Every sweep on a non-coarsest level forwards its step-end value; the
        successor picks it up on the way back up, so fine-level traffic
        overlaps with the coarse pipeline.  Only the coarsest level blocks.
        ``data_final=False`` holds off convergence while the right-hand side
        may still change (coupled solves).
        """
        k = self.iterations + 1
        L = len(self.h)
        lev = self.h.levels
        for l in range(L - 1, 0, -1):
            self._sweep(l, lev[l].sweeps_per_visit)
            self.link.send(f"level{l}", k, self.traj[l].end)
            self._restrict(l - 1)
        if not self.pred_done:
            self.y0[0] = self.link.recv("coarse", k)
        self._sweep(0, lev[0].sweeps_per_visit)
        self.link.send("coarse", k, self.traj[0].end)
        for l in range(1, L):
            self._interpolate(l)
            if not self.pred_done:
                self.y0[l] = np.array(self.link.recv(f"level{l}", k), dtype=float)
                self.traj[l].set_initial(self.y0[l], self.rhs[l])
            if l < L - 1:
                self._sweep(l, lev[l].sweeps_per_visit)
        if not self.pred_done:
            pred_conv, y_end = self.link.recv("status", k)
            if pred_conv:
                # the predecessor stops here; its final value is the initial value from now on
                self._set_fine_initial(y_end)
                self.pred_done = True
        self.residual = residual(self.fine, self.y0[-1], self.h.fine.rule, self.dt)
        ref = self.rhs[-1].ops.norm(self.y0[-1])
        self.converged = data_final and convergence_rule(self.residual, self.pred_done, self.tol.atol,
                                                         self.tol.rtol, ref)
        self.iterations = k
        self.link.send("status", k, (self.converged, self.fine.end))
        return self.converged

    def run(self, y0: Optional[np.ndarray] = None, warm: Optional[np.ndarray] = None) -> np.ndarray:
        """Predict, then iterate until converged or out of iterations."""
        self.predict(y0, warm)
        while self.iterations < self.tol.max_iters:
            if self.iterate():
                break
        return self.fine.y

    def record(self) -> StepRecord:
        return StepRecord(self.step, self.iterations, list(self.sweep_counts), self.residual, self.converged)


# ---------------------------------------------------------------------------

def mlsdc_step(hierarchy: Hierarchy, equation: Equation, step: int, y0: np.ndarray, dt: float,
               tol: Tolerance = Tolerance(), warm: Optional[np.ndarray] = None,
               predictor_sweeps: int = 1) -> tuple[np.ndarray, StepRecord]:
    """Advance one step with sequential multilevel SDC; returns fine node values."""
    s = StepSolver(hierarchy, equation, step, dt, NO_LINK, tol, predictor_sweeps)
    y = s.run(y0, warm)
    return y.copy(), s.record()


def _block_links(decomp: TimeDecomposition, endpoint: Optional[Endpoint], channel: str, i: int):
    R = decomp.num_workers
    b, pos = divmod(i, R)
    prev_rank = decomp.owner(i - 1) if pos > 0 else None
    next_rank = decomp.owner(i + 1) if pos < R - 1 else None
    return PipelineLink(endpoint, channel, b, prev_rank, next_rank)


def worker_solve(endpoint: Optional[Endpoint], hierarchy: Hierarchy, decomp: TimeDecomposition,
                 y_initial: np.ndarray, equation: Equation, tol: Tolerance,
                 warm: Optional[Callable[[int], np.ndarray]] = None, predictor_sweeps: int = 1,
                 channel: str = "state") -> dict:
    """The part of a PFASST solve run by one worker; returns its steps' results."""
    rank = 0 if endpoint is None else endpoint.rank
    R = decomp.num_workers
    out = {"trajectories": {}, "records": []}
    y_block = y_initial
    for b in range(decomp.num_blocks):
        steps = decomp.block(b)
        mine = [i for i in steps if decomp.owner(i) == rank]
        if not mine:
            continue
        (i,) = mine
        pos = i - b * R
        link = _block_links(decomp, endpoint, channel, i)
        if pos == 0 and b > 0:
            if R > 1:
                y_block = endpoint.recv(decomp.owner(i - 1), (channel, "block", b, 0))
        s = StepSolver(hierarchy, equation, i, decomp.dt, link, tol, predictor_sweeps)
        s.run(y_block if pos == 0 else None, None if warm is None else warm(i))
        out["trajectories"][i] = s.fine.y.copy()
        out["records"].append(s.record())
        if pos == R - 1:
            if b + 1 < decomp.num_blocks:
                dest = decomp.owner(i + 1)
                if R > 1:
                    endpoint.send(dest, (channel, "block", b + 1, 0), s.fine.end)
                else:
                    y_block = s.fine.end.copy()
    return out


def pfasst_solve(hierarchy: Hierarchy, decomp: TimeDecomposition, y_initial: np.ndarray,
                 equation: Equation, tol: Tolerance = Tolerance(), backend: str = "thread",
                 warm: Optional[np.ndarray] = None, predictor_sweeps: int = 1,
                 strict: bool = False) -> tuple[np.ndarray, SolveReport]:
    """Solve over all steps; returns fine node values of shape (N, nodes, *shape).

    ``warm`` (same shape as the result) replaces the coarse predictor with
    stored trajectories.  ``strict`` turns an unconverged step into
    :class:`NonConvergenceError`.
    """
    t_start = time.perf_counter()
    warm_fn = None if warm is None else (lambda i: warm[i])
    if decomp.num_workers == 1:
        results = [worker_solve(None, hierarchy, decomp, y_initial, equation, tol, warm_fn, predictor_sweeps)]
    else:
        results = run_workers(backend, decomp.num_workers,
                              lambda ep: worker_solve(ep, hierarchy, decomp, y_initial, equation, tol,
                                                      warm_fn, predictor_sweeps))
    return _gather(results, decomp, hierarchy, time.perf_counter() - t_start, strict)


def _gather(results, decomp, hierarchy, wall, strict):
    fine = hierarchy.fine
    Y = np.empty((decomp.num_steps, fine.rule.num_nodes) + fine.grid.shape)
    records = []
    for r in results:
        for i, y in r["trajectories"].items():
            Y[i] = y
        records.extend(r["records"])
    records.sort(key=lambda r: r.step)
    report = SolveReport(records, wall)
    if strict and not report.converged:
        bad = [r.step for r in records if not r.converged]
        raise NonConvergenceError(f"steps {bad[:5]} did not converge")
    return Y, report
