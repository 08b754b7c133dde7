"""Steepest descent and nonlinear CG on time-distributed controls."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .field import SpectralOps
from .pfasst import TimeDecomposition
from .problems import reduce_in_worker_order

SD = "sd"
NCG = "ncg"
ARMIJO = "armijo"
STRONG_WOLFE = "strong_wolfe"
BETA_RULES = ("fr", "prp", "dy")


class DecompositionMismatch(ValueError):
    pass


class DegenerateBeta(ArithmeticError):
    pass


class LineSearchError(RuntimeError):
    pass


@dataclass(eq=False)
class ControlTrajectory:
    """Control-like data at the nodes of every step, shape (N, nodes, *grid).

    ``weights`` are the per-node time-quadrature weights on a unit step, so
    the inner product is sum_j dt * sum_m w_m (v_jm, w_jm)_L2.
    """

    values: np.ndarray
    decomp: TimeDecomposition
    weights: np.ndarray
    ops: SpectralOps

    @property
    def dt(self) -> float:
        return self.decomp.dt

    def like(self, values: np.ndarray) -> "ControlTrajectory":
        return ControlTrajectory(values, self.decomp, self.weights, self.ops)

    def copy(self) -> "ControlTrajectory":
        return self.like(self.values.copy())

    def _check(self, other: "ControlTrajectory"):
        if (other.values.shape != self.values.shape or other.decomp.num_steps != self.decomp.num_steps
                or other.decomp.t_end != self.decomp.t_end or not np.array_equal(other.weights, self.weights)):
            raise DecompositionMismatch("control trajectories live on different decompositions")

    def __add__(self, other):
        self._check(other)
        return self.like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.values - other.values)

    def __mul__(self, s: float):
        return self.like(self.values * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def axpy(self, alpha: float, d: "ControlTrajectory") -> "ControlTrajectory":
        self._check(d)
        return self.like(self.values + alpha * d.values)

    def inner(self, other: "ControlTrajectory") -> float:
        return time_inner(self, other)

    def norm(self) -> float:
        return math.sqrt(max(time_inner(self, self), 0.0))


def time_inner(v: ControlTrajectory, w: ControlTrajectory) -> float:
    """Time-parallel L2(0,T;L2) inner product, reduced in fixed worker order."""
    v._check(w)
    if v.decomp.num_workers != w.decomp.num_workers:
        raise DecompositionMismatch("control trajectories are distributed differently")
    ops, wts, dt = v.ops, v.weights, v.dt
    per_step = []
    for j in range(v.values.shape[0]):
        s = 0.0
        for m, wm in enumerate(wts):
            if wm != 0.0:
                s += wm * ops.inner(v.values[j, m], w.values[j, m])
        per_step.append(dt * s)
    return reduce_in_worker_order(per_step, v.decomp)


def beta(g_new: ControlTrajectory, g_old: ControlTrajectory, d_old: ControlTrajectory, rule: str) -> float:
    """Nonlinear CG update coefficient; raises DegenerateBeta on a vanishing denominator."""
    if rule == "fr":
        den = g_old.inner(g_old)
        if den <= 0.0:
            raise DegenerateBeta("||g_old|| = 0")
        return g_new.inner(g_new) / den
    if rule == "prp":
        den = g_old.inner(g_old)
        if den <= 0.0:
            raise DegenerateBeta("||g_old|| = 0")
        return g_new.inner(g_new - g_old) / den
    if rule == "dy":
        den = d_old.inner(g_new - g_old)
        if den == 0.0:
            raise DegenerateBeta("(d_old, g_new - g_old) = 0")
        return g_new.inner(g_new) / den
    raise ValueError(f"unknown beta rule {rule!r}")


class Evaluator(Protocol):
    """Reduced objective j(u) = J(y(u), u) and its L2 gradient."""

    state_sweeps: int
    adjoint_sweeps: int

    def value(self, u: ControlTrajectory) -> float: ...

    def gradient(self, u: ControlTrajectory) -> ControlTrajectory: ...


@dataclass
class OptimizerConfig:
    method: str = SD
    beta_rule: str = "dy"
    linesearch: Optional[str] = None  # default: armijo for sd, strong_wolfe for ncg
    c1: float = 1e-4
    c2: float = 0.1
    max_iters: int = 50
    initial_step: float = 1.0
    gradient_tol: float = 0.0
    max_trials: int = 30

    def __post_init__(self):
        if self.method not in (SD, NCG):
            raise ValueError(f"unknown method {self.method!r}")
        if self.beta_rule not in BETA_RULES:
            raise ValueError(f"unknown beta rule {self.beta_rule!r}")
        if self.linesearch is None:
            self.linesearch = ARMIJO if self.method == SD else STRONG_WOLFE
        if self.linesearch not in (ARMIJO, STRONG_WOLFE):
            raise ValueError(f"unknown line search {self.linesearch!r}")
        if self.method == NCG and self.linesearch != STRONG_WOLFE:
            raise ValueError("ncg needs the strong Wolfe line search")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.initial_step <= 0 or self.max_trials < 1:
            raise ValueError("initial_step and max_trials must be positive")


@dataclass
class OptimizerState:
    u: ControlTrajectory
    g: ControlTrajectory
    d: ControlTrajectory
    J: float
    alpha: float = 0.0
    beta: float = 0.0
    beta_rule: str = "dy"
    iteration: int = 0
    state_sweeps: int = 0
    adjoint_sweeps: int = 0


@dataclass
class HistoryRow:
    iteration: int
    J: float
    grad_norm: float
    alpha: float
    beta: float
    state_sweeps: int
    adjoint_sweeps: int
    wall_time: float
    descent: float = 0.0  # (g_k, d_k) used for the step leaving this iterate


@dataclass
class History:
    rows: list[HistoryRow] = field(default_factory=list)
    status: str = "running"
    trials: int = 0

    def __len__(self):
        return len(self.rows)

    @property
    def J(self) -> list[float]:
        return [r.J for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "J", "grad_norm", "alpha", "beta", "state_sweeps", "adjoint_sweeps",
                        "wall_time"])
            for r in self.rows:
                w.writerow([r.iteration, repr(float(r.J)), repr(float(r.grad_norm)), repr(float(r.alpha)), repr(float(r.beta)),
                            r.state_sweeps, r.adjoint_sweeps, f"{r.wall_time:.3f}"])


@dataclass
class LineSearchResult:
    alpha: float
    J: float
    g: Optional[ControlTrajectory]
    trials: int


def _armijo(u, d, J0, gd, ev, cfg, alpha0) -> LineSearchResult:
    alpha = alpha0
    for trial in range(1, cfg.max_trials + 1):
        Jt = ev.value(u.axpy(alpha, d))
        if np.isfinite(Jt) and Jt <= J0 + cfg.c1 * alpha * gd:
            return LineSearchResult(alpha, Jt, None, trial)
        alpha *= 0.5
    raise LineSearchError(f"Armijo condition not met after {cfg.max_trials} trials")


def _interpolate_min(a_lo, f_lo, df_lo, a_hi, f_hi):
    # minimiser of the quadratic through (a_lo, f_lo, df_lo) and (a_hi, f_hi), safeguarded
    h = a_hi - a_lo
    denom = 2.0 * (f_hi - f_lo - df_lo * h)
    if denom != 0.0:
        a = a_lo - df_lo * h * h / denom
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        margin = 0.1 * (hi - lo)
        if lo + margin <= a <= hi - margin:
            return a
    return 0.5 * (a_lo + a_hi)


def _strong_wolfe(u, d, J0, gd, ev, cfg, alpha0) -> LineSearchResult:
    """Bracketing and zoom for the strong Wolfe conditions."""
    c1, c2 = cfg.c1, cfg.c2
    trials = 0

    def phi(a):
        nonlocal trials
        trials += 1
        ut = u.axpy(a, d)
        Ja = ev.value(ut)
        if not np.isfinite(Ja):
            return Ja, None, np.nan
        ga = ev.gradient(ut)
        return Ja, ga, ga.inner(d)

    def zoom(a_lo, f_lo, df_lo, a_hi, f_hi):
        while trials < cfg.max_trials:
            a = _interpolate_min(a_lo, f_lo, df_lo, a_hi, f_hi)
            fa, ga, dfa = phi(a)
            if not np.isfinite(fa) or fa > J0 + c1 * a * gd or fa >= f_lo:
                a_hi, f_hi = a, fa if np.isfinite(fa) else np.inf
                continue
            if abs(dfa) <= -c2 * gd:
                return LineSearchResult(a, fa, ga, trials)
            if dfa * (a_hi - a_lo) >= 0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, df_lo = a, fa, dfa
        raise LineSearchError(f"strong Wolfe zoom failed after {cfg.max_trials} trials")

    a_prev, f_prev, df_prev = 0.0, J0, gd
    a = alpha0
    while trials < cfg.max_trials:
        fa, ga, dfa = phi(a)
        if not np.isfinite(fa) or fa > J0 + c1 * a * gd or (trials > 1 and fa >= f_prev):
            return zoom(a_prev, f_prev, df_prev, a, fa if np.isfinite(fa) else np.inf)
        if abs(dfa) <= -c2 * gd:
            return LineSearchResult(a, fa, ga, trials)
        if dfa >= 0:
            return zoom(a, fa, dfa, a_prev, f_prev)
        a_prev, f_prev, df_prev = a, fa, dfa
        a *= 2.0
    raise LineSearchError(f"strong Wolfe bracketing failed after {cfg.max_trials} trials")


def line_search(u: ControlTrajectory, d: ControlTrajectory, J_u: float, g_u: ControlTrajectory,
                evaluator: Evaluator, config: OptimizerConfig,
                alpha0: Optional[float] = None) -> LineSearchResult:
    """Step length along ``d``; ``d`` must be a descent direction (NotDescent otherwise)."""
    gd = g_u.inner(d)
    if not gd < 0.0:
        raise NotDescent(f"(g, d) = {gd:.3e} is not negative")
    alpha0 = config.initial_step if alpha0 is None else alpha0
    if config.linesearch == ARMIJO:
        return _armijo(u, d, J_u, gd, evaluator, config, alpha0)
    return _strong_wolfe(u, d, J_u, gd, evaluator, config, alpha0)


class NotDescent(ValueError):
    pass


def optimize(u0: ControlTrajectory, evaluator: Evaluator, config: OptimizerConfig = OptimizerConfig(),
             callback=None) -> tuple[ControlTrajectory, History]:
    """Run SD or NCG from ``u0``; returns the last iterate and the history.

    Line-search failures restart once from steepest descent and then stop
    the run with ``history.status = "line_search_failed"``.
    """
    t0 = time.perf_counter()
    hist = History()
    u = u0.copy()
    J = evaluator.value(u)
    g = evaluator.gradient(u)
    d = -g
    st = OptimizerState(u, g, d, J, beta_rule=config.beta_rule)

    def record(alpha, b):
        gn = st.g.norm()
        hist.rows.append(HistoryRow(st.iteration, st.J, gn, alpha, b, evaluator.state_sweeps,
                                    evaluator.adjoint_sweeps, time.perf_counter() - t0))
        if callback is not None:
            callback(st, hist)
        return gn

    gn = record(0.0, 0.0)
    prev_alpha, prev_gd = None, None
    while st.iteration < config.max_iters:
        if gn <= config.gradient_tol:
            hist.status = "converged"
            return st.u, hist
        gd = st.g.inner(st.d)
        if not gd < 0.0:
            st.d = -st.g
            gd = st.g.inner(st.d)
        hist.rows[-1].descent = gd
        alpha0 = config.initial_step if prev_alpha is None else prev_alpha * prev_gd / gd
        try:
            res = line_search(st.u, st.d, st.J, st.g, evaluator, config, alpha0)
        except LineSearchError:
            try:
                st.d = -st.g
                gd = st.g.inner(st.d)
                res = line_search(st.u, st.d, st.J, st.g, evaluator, config, config.initial_step)
            except LineSearchError:
                hist.status = "line_search_failed"
                return st.u, hist
        hist.trials += res.trials
        u_new = st.u.axpy(res.alpha, st.d)
        g_new = res.g if res.g is not None else evaluator.gradient(u_new)
        b = 0.0
        if config.method == NCG:
            try:
                b = beta(g_new, st.g, st.d, config.beta_rule)
            except DegenerateBeta:
                b = 0.0
            if config.beta_rule == "prp" and b < 0.0:
                b = 0.0
        d_new = -g_new if b == 0.0 else (-g_new).axpy(b, st.d)
        prev_alpha, prev_gd = res.alpha, gd
        st.u, st.g, st.d, st.J = u_new, g_new, d_new, res.J
        st.alpha, st.beta = res.alpha, b
        st.iteration += 1
        st.state_sweeps, st.adjoint_sweeps = evaluator.state_sweeps, evaluator.adjoint_sweeps
        gn = record(res.alpha, b)
    hist.status = "max_iters"
    return st.u, hist
