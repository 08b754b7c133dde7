"""Build problems from configs, run them, and write CSV and snapshot artifacts."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..field import GridSpec, SpatialField, load_snapshots, save_snapshots
from ..gradient import ReducedObjective, SolverSettings, evaluate_gradient
from ..optimizer import OptimizerConfig, optimize
from ..pfasst import Equation, Hierarchy, Tolerance, mlsdc_step
from ..problems import ProblemDefinition, make_heat_problem, make_nagumo_problem
from .baseline import control_error, run_imex_euler_baseline
from .config import ConfigError, ExperimentConfig

NAGUMO_LENGTH = 20.0

SUMMARY_COLUMNS = ["label", "problem", "mode", "strategy", "warm", "sweeper", "gamma", "steps", "nproc", "atol",
                   "walltime", "iterations", "status", "final_J", "final_grad_norm", "control_error",
                   "total_state_sweeps", "total_adjoint_sweeps", "mean_state_sweeps", "mean_adjoint_sweeps",
                   "converged"]


def build_hierarchy(cfg: ExperimentConfig) -> Hierarchy:
    lv = cfg.levels
    if cfg.problem.name == "heat":
        grids = [GridSpec.periodic(n) for n in lv.points]
    else:
        grids = [GridSpec.neumann(n, NAGUMO_LENGTH) for n in lv.points]
    return Hierarchy.build(grids, lv.nodes, lv.sweeper)


def build_problem(cfg: ExperimentConfig, hierarchy: Optional[Hierarchy] = None) -> ProblemDefinition:
    p = cfg.problem
    h = hierarchy or build_hierarchy(cfg)
    if p.name == "heat":
        prob = make_heat_problem(h, p.lam, p.T, p.steps, p.initial_value)
    else:
        cache = Path(p.y_nat_cache) if p.y_nat_cache else None
        prob = make_nagumo_problem(h, p.gamma, p.lam, p.T, p.steps, p.t_switch, y_nat_tol=p.y_nat_tol, cache=cache)
    if p.sigma > 0:
        # terminal tracking of the target's final value
        prob.objective.sigma = p.sigma
        prob.objective.terminal_target = prob.objective.target[-1, -1].copy()
    return prob


def solver_settings(cfg: ExperimentConfig) -> SolverSettings:
    s = cfg.solver
    return SolverSettings(s.nproc, Tolerance(s.atol, s.rtol, s.max_iters), s.backend, s.predictor_sweeps,
                          s.time_rule, s.propagator, s.require_convergence)


def optimizer_config(cfg: ExperimentConfig) -> OptimizerConfig:
    o = cfg.optimizer
    return OptimizerConfig(o.method, o.beta, o.linesearch or None, o.c1, o.c2, o.max_iters, o.initial_step,
                           o.gradient_tol)


@dataclass
class ExperimentResult:
    summary: dict
    out_dir: Path
    files: list[Path] = field(default_factory=list)


def _config_header(cfg: ExperimentConfig) -> list[str]:
    return [f"# {k} = {v}" for k, v in cfg.to_flat().items()]


def write_csv(path: Path, cfg: ExperimentConfig, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    """CSV with the resolved config as leading ``#`` comment lines."""
    with open(path, "w", newline="") as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _report_rows(report) -> list[list]:
    return [[r.step, lev, s, f"{r.residual:.6e}", int(r.converged)]
            for r in report.records for lev, s in enumerate(r.sweeps)]


def _save_nodes(path: Path, prob: ProblemDefinition, values: np.ndarray) -> Path:
    t = prob.node_times()
    recs = [(float(t[j, m]), SpatialField(prob.grid, values[j, m]))
            for j in range(values.shape[0]) for m in range(values.shape[1])]
    save_snapshots(path, recs)
    return path


def load_control(path, prob: ProblemDefinition) -> np.ndarray:
    recs = load_snapshots(path)
    shape = prob.node_shape
    if len(recs) != shape[0] * shape[1] or recs[0][1].grid != prob.grid:
        raise ConfigError(f"{path} does not match the problem's nodes and grid")
    return np.array([f.values for _, f in recs]).reshape(shape)


def _rel_error(prob: ProblemDefinition, ev: ReducedObjective, u: np.ndarray) -> float:
    if prob.exact_control is None:
        return math.nan
    e = ev.control(prob.exact_control)
    n = e.norm()
    return (ev.control(u) - e).norm() / n if n > 0 else math.nan


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run one configuration and write its artifacts into ``out_dir``.

    Raises :class:`ConfigError` before any solve on invalid input and
    :class:`NonConvergenceError` when convergence is required but missed.
    """
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else Path("runs") / (cfg.run.label or cfg.problem.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    files = [out / "config.txt"]
    t0 = time.perf_counter()
    prob = build_problem(cfg)
    row = {c: "" for c in SUMMARY_COLUMNS}
    row.update(label=cfg.run.label, problem=cfg.problem.name, mode=cfg.run.mode, strategy=cfg.gradient.strategy,
               warm=int(cfg.gradient.warm), sweeper=cfg.levels.sweeper, gamma=cfg.problem.gamma,
               steps=cfg.problem.steps, nproc=cfg.solver.nproc, atol=cfg.solver.atol)
    settings = solver_settings(cfg)

    if cfg.run.mode == "baseline":
        t_run = time.perf_counter()
        u, hist, model = run_imex_euler_baseline(prob, cfg.run.baseline_dt, optimizer_config(cfg))
        files.append(_write_history(out / "history.csv", cfg, hist))
        last = hist.rows[-1]
        row.update(walltime=f"{time.perf_counter() - t_run:.3f}", iterations=last.iteration, status=hist.status,
                   final_J=repr(float(last.J)), final_grad_norm=repr(float(last.grad_norm)),
                   control_error=repr(float(control_error(u, model.exact_control))),
                   total_state_sweeps=last.state_sweeps, total_adjoint_sweeps=last.adjoint_sweeps,
                   steps=model.num_steps, converged=1)
    elif cfg.run.mode == "solve":
        u = load_control(cfg.run.control_file, prob) if cfg.run.control_file else prob.zero_control()
        t_run = time.perf_counter()
        res = evaluate_gradient(prob, u, cfg.gradient.strategy, settings)
        rs, ra = res.state_report, res.adjoint_report
        files.append(write_csv(out / "solve_report.csv", cfg, ["step", "level", "sweeps", "residual", "converged"],
                               _report_rows(rs)))
        files.append(write_csv(out / "adjoint_report.csv", cfg,
                               ["step", "level", "sweeps", "residual", "converged"], _report_rows(ra)))
        files.append(_save_nodes(out / "state.pfld", prob, res.state))
        ev = ReducedObjective(prob, cfg.gradient.strategy, settings)
        row.update(walltime=f"{time.perf_counter() - t_run:.3f}", iterations=0, status="solved",
                   final_J=repr(float(res.J)), final_grad_norm=repr(float(ev.control(res.gradient).norm())),
                   control_error=repr(float(_rel_error(prob, ev, u))),
                   total_state_sweeps=rs.total_sweeps(), total_adjoint_sweeps=ra.total_sweeps(),
                   mean_state_sweeps=f"{rs.mean_sweeps():.2f}", mean_adjoint_sweeps=f"{ra.mean_sweeps():.2f}",
                   converged=int(rs.converged and ra.converged))
    else:
        ev = ReducedObjective(prob, cfg.gradient.strategy, settings, warm_start=cfg.gradient.warm)
        t_run = time.perf_counter()
        u, hist = optimize(ev.control(), ev, optimizer_config(cfg))
        files.append(_write_history(out / "history.csv", cfg, hist))
        if ev.last is not None:
            files.append(write_csv(out / "solve_report.csv", cfg,
                                   ["step", "level", "sweeps", "residual", "converged"],
                                   _report_rows(ev.last.state_report)))
            files.append(_save_nodes(out / "state.pfld", prob, ev.last.state))
        files.append(_save_nodes(out / "control.pfld", prob, u.values))
        last = hist.rows[-1]
        row.update(walltime=f"{time.perf_counter() - t_run:.3f}", iterations=last.iteration, status=hist.status,
                   final_J=repr(float(last.J)), final_grad_norm=repr(float(last.grad_norm)),
                   control_error=repr(float(_rel_error(prob, ev, u.values))),
                   total_state_sweeps=ev.state_sweeps, total_adjoint_sweeps=ev.adjoint_sweeps,
                   converged=int(ev.all_converged))
    files.append(write_csv(out / "summary.csv", cfg, SUMMARY_COLUMNS, [[row[c] for c in SUMMARY_COLUMNS]]))
    row["total_time"] = f"{time.perf_counter() - t0:.3f}"
    return ExperimentResult(row, out, files)


def _write_history(path: Path, cfg: ExperimentConfig, hist) -> Path:
    header = ["iteration", "J", "grad_norm", "alpha", "beta", "state_sweeps", "adjoint_sweeps", "wall_time"]
    rows = [[r.iteration, repr(float(r.J)), repr(float(r.grad_norm)), repr(float(r.alpha)), repr(float(r.beta)), r.state_sweeps,
             r.adjoint_sweeps, f"{r.wall_time:.3f}"] for r in hist.rows]
    return write_csv(path, cfg, header, rows)


def write_summary_table(path: Path, results: Sequence[ExperimentResult]) -> Path:
    """All summary rows of a preset run in one CSV (walltime is machine dependent)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in results:
            w.writerow([r.summary[c] for c in SUMMARY_COLUMNS])
    return path


# -- temporal order ----------------------------------------------------------------------

@dataclass
class StudyRow:
    dt: float
    error: float
    order: float  # against the previous row; nan for the first row or below the floor
    floor: bool


@dataclass
class StudyResult:
    rows: list[StudyRow]
    fitted_order: float

    def to_csv(self, path, cfg: Optional[ExperimentConfig] = None) -> Path:
        with open(path, "w", newline="") as fh:
            if cfg is not None:
                for line in _config_header(cfg):
                    fh.write(line + "\n")
            w = csv.writer(fh)
            w.writerow(["dt", "error", "observed_order", "below_floor"])
            for r in self.rows:
                w.writerow([repr(float(r.dt)), repr(float(r.error)), "" if math.isnan(r.order) else f"{r.order:.3f}",
                            int(r.floor)])
            w.writerow(["fitted", "", "" if math.isnan(self.fitted_order) else f"{self.fitted_order:.3f}", ""])
        return Path(path)


def convergence_study(problem: ProblemDefinition, dts: Sequence[float], tol: Tolerance,
                      floor: Optional[float] = None, fit_last: int = 3) -> StudyResult:
    """Single-step errors of the homogeneous linear problem against the exact exponential.

    Errors are relative to the initial value.  Points whose error is below
    ``floor`` (default 100 * atol) are reported but excluded from the fit,
    which uses the ``fit_last`` smallest step sizes above the floor (large
    steps of a stiff mode are not yet asymptotic).
    """
    if not problem.is_linear:
        raise ValueError("the order study needs a linear problem with an exact propagator")
    floor = 100 * tol.atol if floor is None else floor
    h, ops = problem.hierarchy, problem.ops
    eq = Equation(h, problem.kappa)
    y0 = problem.y0
    ref_norm = ops.norm(y0)
    rows: list[StudyRow] = []
    for dt in dts:
        Y, _ = mlsdc_step(h, eq, 0, y0, dt, tol)
        err = ops.norm(Y[-1] - ops.propagate(y0, problem.kappa, dt)) / ref_norm
        below = err <= floor
        order = math.nan
        if rows and not below and not rows[-1].floor:
            order = math.log(rows[-1].error / err) / math.log(rows[-1].dt / dt)
        rows.append(StudyRow(float(dt), float(err), order, bool(below)))
    fit = [r for r in rows if not r.floor][-fit_last:]
    fitted = math.nan
    if len(fit) >= 2:
        fitted = float(np.polyfit(np.log([r.dt for r in fit]), np.log([r.error for r in fit]), 1)[0])
    return StudyResult(rows, fitted)
