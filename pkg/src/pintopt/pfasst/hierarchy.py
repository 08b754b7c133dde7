"""Level hierarchies, time decompositions, and per-step right-hand sides."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..field import GridSpec, operators
from ..quadrature import QuadratureRule, build_lobatto_rule
from ..sweeper import (SWEEPER_KINDS, CubicReaction, LevelTransfer, LinearReaction,
                       RhsSplit)


@dataclass(frozen=True)
class LevelSpec:
    grid: GridSpec
    rule: QuadratureRule
    sweeper_kind: str = "imex"
    sweeps_per_visit: int = 1

    def __post_init__(self):
        if self.sweeper_kind not in SWEEPER_KINDS:
            raise ValueError(f"unknown sweeper {self.sweeper_kind!r}")
        if self.sweeps_per_visit < 1:
            raise ValueError("sweeps_per_visit must be positive")


class Hierarchy:
    """Levels ordered coarse -> fine; the last level carries the solution."""

    def __init__(self, levels: Sequence[LevelSpec]):
        if not levels:
            raise ValueError("need at least one level")
        self.levels = list(levels)
        for c, f in zip(self.levels, self.levels[1:]):
            if any(pc > pf for pc, pf in zip(c.grid.points, f.grid.points)) or c.rule.num_nodes > f.rule.num_nodes:
                raise ValueError("levels must be ordered coarse to fine")
        self.transfers = [LevelTransfer(f.grid, f.rule, c.grid, c.rule)
                          for c, f in zip(self.levels, self.levels[1:])]

    @classmethod
    def build(cls, grids: Sequence[GridSpec], node_counts: Sequence[int], sweeper_kind: str = "imex",
              sweeps_per_visit: int | Sequence[int] = 1) -> "Hierarchy":
        if len(grids) != len(node_counts):
            raise ValueError("one grid per node count")
        spv = [sweeps_per_visit] * len(grids) if np.isscalar(sweeps_per_visit) else list(sweeps_per_visit)
        return cls([LevelSpec(g, build_lobatto_rule(n), sweeper_kind, s)
                    for g, n, s in zip(grids, node_counts, spv)])

    def __len__(self):
        return len(self.levels)

    @property
    def fine(self) -> LevelSpec:
        return self.levels[-1]

    def with_sweeper(self, kind: str) -> "Hierarchy":
        return Hierarchy([LevelSpec(l.grid, l.rule, kind, l.sweeps_per_visit) for l in self.levels])

    def restrict_to(self, values: np.ndarray, level: int) -> np.ndarray:
        """Restrict fine node data (num_nodes, *shape) down to ``level``."""
        for l in range(len(self.levels) - 2, level - 1, -1):
            values = self.transfers[l].restrict_nodes(values)
        return values

    def restrict_field_to(self, a: np.ndarray, level: int) -> np.ndarray:
        for l in range(len(self.levels) - 2, level - 1, -1):
            a = self.transfers[l].restrict_field(a)
        return a


@dataclass(frozen=True)
class TimeDecomposition:
    """N steps on R workers, processed in blocks of R consecutive steps.

    Step indices are in solve order.  With ``reflected=True`` the solve runs
    over reversed time (adjoint), and solve step i lives on the worker that
    owns time step N-1-i, so data stays where the state was computed.
    """

    num_steps: int
    num_workers: int
    t_end: float
    t_start: float = 0.0
    reflected: bool = False

    def __post_init__(self):
        if self.num_steps < 1 or self.num_workers < 1:
            raise ValueError("need positive step and worker counts")
        if self.num_steps % self.num_workers:
            raise ValueError("num_steps must be a multiple of num_workers")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.num_steps

    @property
    def num_blocks(self) -> int:
        return self.num_steps // self.num_workers

    def time_step(self, i: int) -> int:
        return self.num_steps - 1 - i if self.reflected else i

    def owner(self, i: int) -> int:
        return self.time_step(i) % self.num_workers

    def block(self, b: int) -> list[int]:
        R = self.num_workers
        return list(range(b * R, (b + 1) * R))

    def block_map(self) -> dict[int, tuple[int, int]]:
        return {i: (self.owner(i), i // self.num_workers) for i in range(self.num_steps)}

    def steps_of(self, worker: int) -> list[int]:
        return [i for i in range(self.num_steps) if self.owner(i) == worker]

    def flipped(self) -> "TimeDecomposition":
        return TimeDecomposition(self.num_steps, self.num_workers, self.t_end, self.t_start, not self.reflected)


class Equation:
    """Right-hand sides kappa*Lap(y) - r(y) + s for every step and level.

    ``source(step)`` and ``coefficient(step)`` return fine-node data of shape
    (fine nodes, *fine shape); coarse levels see the space-time restriction.
    A ``coefficient`` gives the linear reaction r(y) = c*y, ``reaction`` a
    node-independent pointwise reaction.
    """

    def __init__(self, hierarchy: Hierarchy, kappa: float,
                 source: Optional[Callable[[int], np.ndarray]] = None,
                 reaction: Optional[CubicReaction] = None,
                 coefficient: Optional[Callable[[int], np.ndarray]] = None):
        if reaction is not None and coefficient is not None:
            raise ValueError("give either a pointwise reaction or a linear coefficient")
        self.hierarchy = hierarchy
        self.kappa = kappa
        self.source = source
        self.reaction = reaction
        self.coefficient = coefficient

    @property
    def is_linear(self) -> bool:
        return self.reaction is None

    def rhs(self, step: int, level: int) -> RhsSplit:
        h = self.hierarchy
        spec = h.levels[level]
        src = None
        if self.source is not None:
            src = h.restrict_to(self.source(step), level)
        reaction = self.reaction
        if self.coefficient is not None:
            reaction = LinearReaction(h.restrict_to(self.coefficient(step), level))
        return RhsSplit(operators(spec.grid), self.kappa, src, reaction)
