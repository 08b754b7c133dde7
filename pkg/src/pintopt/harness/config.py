"""Flat ``section.key = value`` experiment configuration.

Lines starting with ``#`` are comments.  Tuples are comma separated
(``levels.points = 64,128,256``).  Every key maps onto one field of the
section dataclasses below; unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..gradient import PROPAGATORS, STRATEGIES
from ..pfasst.comm import BACKENDS
from ..sweeper import SWEEPER_KINDS

PROBLEMS = ("heat", "nagumo")
MODES = ("optimize", "solve", "baseline")
TIME_RULES = ("collocation", "trapezoid")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    name: str = "heat"
    lam: float = 0.05
    gamma: float = 1.0
    sigma: float = 0.0
    T: float = 2.0
    steps: int = 20
    initial_value: str = "consistent"  # heat only
    t_switch: float = 2.5  # nagumo only
    y_nat_tol: float = 1e-12
    y_nat_cache: str = ""


@dataclass
class LevelsConfig:
    points: tuple = (16, 32, 64)  # per dimension, coarse -> fine
    nodes: tuple = (2, 3, 5)
    sweeper: str = "imex"


@dataclass
class SolverConfig:
    atol: float = 1e-10
    rtol: float = 1e-10
    max_iters: int = 100
    nproc: int = 1
    backend: str = "thread"
    predictor_sweeps: int = 1
    time_rule: str = "collocation"
    propagator: str = "collocation"
    require_convergence: bool = False


@dataclass
class GradientConfig:
    strategy: str = "state_then_adjoint"
    warm: bool = False


@dataclass
class OptimizerSection:
    method: str = "sd"
    beta: str = "dy"
    linesearch: str = ""  # empty: armijo for sd, strong_wolfe for ncg
    c1: float = 1e-4
    c2: float = 0.1
    max_iters: int = 50
    initial_step: float = 1.0
    gradient_tol: float = 0.0


@dataclass
class RunConfig:
    mode: str = "optimize"
    label: str = ""
    control_file: str = ""  # solve mode: control snapshots; empty means u = 0
    baseline_dt: float = 1e-3


SECTIONS = ("problem", "levels", "solver", "gradient", "optimizer", "run")


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    levels: LevelsConfig = field(default_factory=LevelsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    gradient: GradientConfig = field(default_factory=GradientConfig)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    run: RunConfig = field(default_factory=RunConfig)

    # -- flat form ----------------------------------------------------------------
    def to_flat(self) -> dict[str, str]:
        out = {}
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                out[f"{sec}.{f.name}"] = _format(getattr(obj, f.name))
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())

    @classmethod
    def from_flat(cls, items: dict[str, Any]) -> "ExperimentConfig":
        return cls().with_overrides(items)

    def with_overrides(self, items: dict[str, Any]) -> "ExperimentConfig":
        new = dataclasses.replace(self, **{s: dataclasses.replace(getattr(self, s)) for s in SECTIONS})
        for key, raw in items.items():
            sec, _, name = key.partition(".")
            if sec not in SECTIONS or not name:
                raise ConfigError(f"unknown key {key!r}")
            obj = getattr(new, sec)
            fields = {f.name: f for f in dataclasses.fields(obj)}
            if name not in fields:
                raise ConfigError(f"unknown key {key!r}")
            default = getattr(type(obj)(), name)
            setattr(obj, name, _parse(key, raw, default))
        return new

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_flat(parse_lines(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)

    # -- validation -----------------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        p, lv, s, g, o, r = self.problem, self.levels, self.solver, self.gradient, self.optimizer, self.run
        _check(p.name in PROBLEMS, f"problem.name must be one of {PROBLEMS}")
        _check(r.mode in MODES, f"run.mode must be one of {MODES}")
        _check(p.lam >= 0 and p.sigma >= 0, "problem.lam and problem.sigma must be non-negative")
        _check(p.T > 0 and p.steps >= 1, "problem.T and problem.steps must be positive")
        _check(len(lv.points) == len(lv.nodes) >= 1, "levels.points and levels.nodes need equal lengths")
        _check(all(a <= b for a, b in zip(lv.points, lv.points[1:])), "levels.points must be coarse to fine")
        _check(all(b % a == 0 for a, b in zip(lv.points, lv.points[1:])), "level point counts need integer ratios")
        _check(min(lv.points) >= 4, "at least 4 points per dimension")
        _check(all(a <= b for a, b in zip(lv.nodes, lv.nodes[1:])), "levels.nodes must be coarse to fine")
        _check(all(2 <= n <= 12 for n in lv.nodes), "node counts must lie in 2..12")
        _check(lv.sweeper in SWEEPER_KINDS, f"levels.sweeper must be one of {SWEEPER_KINDS}")
        _check(s.atol > 0 and s.rtol > 0 and s.max_iters >= 1, "tolerances and max_iters must be positive")
        _check(s.nproc >= 1 and p.steps % s.nproc == 0, "problem.steps must be a multiple of solver.nproc")
        _check(s.backend in BACKENDS, f"solver.backend must be one of {sorted(BACKENDS)}")
        _check(s.predictor_sweeps >= 0, "solver.predictor_sweeps must be non-negative")
        _check(s.time_rule in TIME_RULES, f"solver.time_rule must be one of {TIME_RULES}")
        _check(s.propagator in PROPAGATORS, f"solver.propagator must be one of {PROPAGATORS}")
        _check(g.strategy in STRATEGIES, f"gradient.strategy must be one of {STRATEGIES}")
        if g.strategy == "simultaneous":
            _check(s.nproc == p.steps, "the simultaneous strategy needs solver.nproc == problem.steps")
        if g.strategy == "mixed":
            _check(p.name == "heat", "the mixed strategy needs a linear state equation (heat)")
        if p.name == "heat":
            _check(p.lam > 0, "heat needs lam > 0")
            _check(p.initial_value in ("consistent", "published"), "problem.initial_value: consistent|published")
        if p.name == "nagumo":
            _check(0 < p.t_switch < p.T, "problem.t_switch must lie inside (0, problem.T)")
        if r.mode == "baseline":
            _check(p.name == "nagumo", "the IMEX-Euler baseline is defined for nagumo")
            _check(r.baseline_dt > 0, "run.baseline_dt must be positive")
        _check(o.method in ("sd", "ncg"), "optimizer.method must be sd or ncg")
        _check(o.beta in ("fr", "prp", "dy"), "optimizer.beta must be fr, prp or dy")
        _check(o.linesearch in ("", "armijo", "strong_wolfe"), "optimizer.linesearch: armijo|strong_wolfe")
        _check(not (o.method == "ncg" and o.linesearch == "armijo"), "ncg needs the strong Wolfe line search")
        _check(0 < o.c1 < o.c2 < 1, "need 0 < optimizer.c1 < optimizer.c2 < 1")
        _check(o.max_iters >= 0 and o.initial_step > 0, "optimizer.max_iters >= 0, initial_step > 0")
        return self


def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise ConfigError(msg)


def parse_lines(text: str) -> dict[str, str]:
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        items[key.strip()] = value.strip()
    return items


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, raw, default):
    if not isinstance(raw, str):
        raw = _format(tuple(raw) if isinstance(raw, list) else raw)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
