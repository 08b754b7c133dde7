"""Named experiment presets: a base configuration plus the rows of a table."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .config import ConfigError, ExperimentConfig


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    base: dict
    variants: tuple = ({},)
    study: dict = field(default_factory=dict)

    def configs(self, nproc: int | None = None) -> list[ExperimentConfig]:
        """One validated config per table row; ``nproc`` keeps only that processor count."""
        base = ExperimentConfig.from_flat(self.base)
        out, seen = [], set()
        for v in self.variants:
            items = dict(v)
            if nproc is not None:
                items["solver.nproc"] = nproc
            cfg = base.with_overrides(items)
            key = cfg.dumps()
            if key in seen:
                continue
            seen.add(key)
            try:
                cfg.validate()
            except ConfigError:
                if nproc is None:
                    raise
                continue  # e.g. N not divisible by the requested nproc
            out.append(cfg)
        if not out:
            raise ConfigError(f"preset {self.name!r} has no valid row for nproc={nproc}")
        return out


def _grid(**axes) -> tuple:
    keys = list(axes)
    return tuple(dict(zip(keys, vals)) for vals in itertools.product(*axes.values()))


HEAT_BASE = {
    "problem.name": "heat", "problem.lam": 0.05, "problem.T": 2.0, "problem.steps": 20,
    "levels.points": "16,32,64", "levels.nodes": "2,3,5", "levels.sweeper": "imex",
    "solver.atol": 1e-10, "solver.rtol": 1e-10,
    "gradient.strategy": "state_then_adjoint", "gradient.warm": False,
    "optimizer.method": "sd", "optimizer.max_iters": 50, "run.mode": "optimize",
}

NAGUMO_OPT_BASE = {
    "problem.name": "nagumo", "problem.gamma": 1.0, "problem.lam": 1e-6, "problem.T": 5.0,
    "problem.steps": 32, "levels.points": "32,64,128", "levels.nodes": "3,5,9", "levels.sweeper": "imex",
    "solver.atol": 1e-11, "solver.rtol": 1e-11, "gradient.strategy": "state_then_adjoint",
    "optimizer.method": "ncg", "optimizer.beta": "dy", "optimizer.max_iters": 200, "run.mode": "optimize",
}

HEAT_NPROC = (1, 2, 5, 10, 20)
NAGUMO_NPROC = (1, 2, 4, 8, 16, 32)


def _heat_scaling(strategy: str, warm: bool) -> Preset:
    kind = "plain" if strategy == "state_then_adjoint" else "mixed"
    start = "warm" if warm else "cold"
    return Preset(
        f"heat-scaling-{kind}-{start}",
        f"heat strong scaling, {strategy.replace('_', ' ')} gradients, {start} start, 50 SD iterations",
        {**HEAT_BASE, "gradient.strategy": strategy, "gradient.warm": warm, "run.label": f"{kind}-{start}"},
        _grid(**{"solver.nproc": HEAT_NPROC}),
    )


PRESETS: dict[str, Preset] = {}


def _register(p: Preset) -> None:
    PRESETS[p.name] = p


for _strategy in ("state_then_adjoint", "mixed"):
    for _warm in (False, True):
        _register(_heat_scaling(_strategy, _warm))

_register(Preset(
    "heat-tolerance",
    "heat speedup against residual tolerance 1e-10..1e-4, both strategies, cold and warm, R = 1 and 20",
    HEAT_BASE,
    tuple({**v, "solver.rtol": v["solver.atol"]} for v in _grid(**{
        "solver.atol": (1e-10, 1e-8, 1e-6, 1e-4),
        "gradient.strategy": ("state_then_adjoint", "mixed"),
        "gradient.warm": (False, True),
        "solver.nproc": (1, 20),
    })),
))

_register(Preset(
    "nagumo-gamma",
    "Nagumo state/adjoint sweeps at u = 0 for IMEX and MISDC sweepers over gamma, N and R",
    {"problem.name": "nagumo", "problem.lam": 1e-6, "problem.T": 5.0, "levels.points": "64,128,256",
     "levels.nodes": "3,5,9", "solver.atol": 1e-11, "solver.rtol": 1e-11, "run.mode": "solve"},
    _grid(**{"problem.gamma": (1.0, 3.0, 5.0), "problem.steps": (32, 64, 128), "solver.nproc": (1, 32),
             "levels.sweeper": ("imex", "misdc_lagged", "misdc_newton")})
    + _grid(**{"problem.gamma": (5.0,), "problem.steps": (256,), "solver.nproc": (1, 32),
               "levels.sweeper": ("imex", "misdc_lagged", "misdc_newton")}),
))

for _warm in (False, True):
    _start = "warm" if _warm else "cold"
    _register(Preset(
        f"nagumo-scaling-{_start}",
        f"Nagumo strong scaling, IMEX sweeper, DY-NCG with strong Wolfe, 200 iterations, {_start} start",
        {**NAGUMO_OPT_BASE, "gradient.warm": _warm, "run.label": _start},
        _grid(**{"solver.nproc": NAGUMO_NPROC}),
    ))

_register(Preset(
    "imex-euler-baseline",
    "sequential IMEX-Euler reference, dt = 1e-3, 128 points, DY-NCG, 200 iterations",
    {**NAGUMO_OPT_BASE, "run.mode": "baseline", "run.baseline_dt": 1e-3},
))

_register(Preset(
    "heat-order",
    "temporal order of single heat steps with a 5-node finest level",
    {**HEAT_BASE, "levels.points": "8,16", "levels.nodes": "3,5", "solver.atol": 1e-13, "solver.rtol": 1e-13,
     "run.mode": "solve"},
    study={"dt0": 0.04, "count": 5},
))


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; see preset-list") from None
