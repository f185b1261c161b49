"""Gridworld mazes with barriers, as tabular MDPs and as obstacle-masked ensembles."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .ensembles import EnsembleSpec, InformativeRow
from .errors import ConfigurationError
from .transferability import TabularMDP

__all__ = [
    "ACTIONS",
    "Barrier",
    "MazeSpec",
    "DisconnectedMazeWarning",
    "build_maze_mdp",
    "barrier_masked_ensemble",
    "barrier_sweep_specs",
    "render_ascii",
]

# (name, d_row, d_col); row 0 is the top of the grid
ACTIONS = (("N", -1, 0), ("E", 0, 1), ("S", 1, 0), ("W", 0, -1))
_ARROWS = "^>v<"


class DisconnectedMazeWarning(UserWarning):
    """Some free cell cannot reach the goal."""


@dataclass(frozen=True)
class Barrier:
    cells: frozenset[tuple[int, int]]

    @classmethod
    def band(cls, row: int, col_start: int, col_stop: int) -> Barrier:
        """Horizontal wall on ``row`` covering columns ``[col_start, col_stop)``."""
        return cls(frozenset((row, c) for c in range(col_start, col_stop)))

    @classmethod
    def from_cells(cls, cells: Iterable[Sequence[int]]) -> Barrier:
        return cls(frozenset((int(r), int(c)) for r, c in cells))

    def to_dict(self) -> dict[str, Any]:
        return {"cells": sorted([list(c) for c in self.cells])}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Barrier:
        if "cells" in d:
            return cls.from_cells(d["cells"])
        return cls.band(int(d["row"]), int(d["col_start"]), int(d["col_stop"]))


@dataclass(frozen=True)
class MazeSpec:
    width: int
    height: int
    goal_state: int
    barriers: tuple[Barrier, ...] = ()
    slip_prob: float = 0.1
    step_reward: float = 0.0
    goal_reward: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "barriers", tuple(self.barriers))
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("maze dimensions must be positive")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ConfigurationError("slip_prob must lie in [0, 1)")
        if not 0 <= self.goal_state < self.n_states:
            raise ConfigurationError("goal state out of range")
        for r, c in self.barrier_cells_rc:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ConfigurationError(f"barrier cell {(r, c)} outside the grid")
        blocked = self.barrier_states
        if self.goal_state in blocked:
            raise ConfigurationError("goal cell lies on a barrier")
        if len(blocked) >= self.n_states:
            raise ConfigurationError("maze has no free cell")

    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def barrier_cells_rc(self) -> frozenset[tuple[int, int]]:
        cells = frozenset()
        for b in self.barriers:
            cells |= b.cells
        return cells

    @property
    def barrier_states(self) -> frozenset[int]:
        return frozenset(r * self.width + c for r, c in self.barrier_cells_rc)

    @property
    def total_barrier_width(self) -> int:
        return len(self.barrier_cells_rc)

    def neighbor(self, s: int, action: int) -> int | None:
        """Cell reached by a legal move, or ``None`` for walls and barriers."""
        r, c = divmod(s, self.width)
        _, dr, dc = ACTIONS[action]
        rr, cc = r + dr, c + dc
        if not (0 <= rr < self.height and 0 <= cc < self.width):
            return None
        t = rr * self.width + cc
        return None if t in self.barrier_states else t

    def reachable_from_goal(self) -> set[int]:
        # moves are symmetric on the free cells, so BFS from the goal suffices
        seen = {self.goal_state}
        todo = deque([self.goal_state])
        while todo:
            s = todo.popleft()
            for a in range(len(ACTIONS)):
                t = self.neighbor(s, a)
                if t is not None and t not in seen:
                    seen.add(t)
                    todo.append(t)
        return seen

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.width, "height": self.height, "goal_state": self.goal_state,
            "barriers": [b.to_dict() for b in self.barriers],
            "slip_prob": self.slip_prob, "step_reward": self.step_reward,
            "goal_reward": self.goal_reward,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MazeSpec:
        return cls(width=int(d["width"]), height=int(d["height"]),
                   goal_state=int(d["goal_state"]),
                   barriers=tuple(Barrier.from_dict(b) for b in d.get("barriers", ())),
                   slip_prob=float(d.get("slip_prob", 0.1)),
                   step_reward=float(d.get("step_reward", 0.0)),
                   goal_reward=float(d.get("goal_reward", 1.0)))


def build_maze_mdp(spec: MazeSpec, gamma: float = 0.95, alpha: float = 1.0) -> TabularMDP:
    """Compass-move gridworld.

    The intended move succeeds with probability ``1 - slip_prob``; the slip
    mass is spread evenly over the other legal moves (kept in place when
    there are none).  Moves into walls or barriers bounce back.  Barrier
    cells are absorbing and excluded from rank diagnostics.
    """
    n, n_act = spec.n_states, len(ACTIONS)
    blocked = spec.barrier_states
    kernel = np.zeros((n_act, n, n))
    for s in range(n):
        if s in blocked:
            kernel[:, s, s] = 1.0
            continue
        legal = [a for a in range(n_act) if spec.neighbor(s, a) is not None]
        for a in range(n_act):
            t = spec.neighbor(s, a)
            kernel[a, s, s if t is None else t] += 1.0 - spec.slip_prob
            others = [b for b in legal if b != a]
            if not others:
                kernel[a, s, s] += spec.slip_prob
                continue
            share = spec.slip_prob / len(others)
            for b in others:
                kernel[a, s, spec.neighbor(s, b)] += share
    reward = np.full(n, spec.step_reward, dtype=np.float64)
    reward[spec.goal_state] = spec.goal_reward
    free = np.array([s not in blocked for s in range(n)], dtype=np.float64)
    reachable = spec.reachable_from_goal()
    if len(reachable) < n - len(blocked):
        warnings.warn(f"{n - len(blocked) - len(reachable)} free cells cannot reach the goal",
                      DisconnectedMazeWarning, stacklevel=2)
    return TabularMDP(kernel=kernel, reward=reward, gamma=gamma, init_dist=free / free.sum(),
                      alpha=alpha, excluded_states=tuple(sorted(blocked)))


def barrier_masked_ensemble(spec: MazeSpec, base: EnsembleSpec) -> EnsembleSpec:
    """Obstacle prior derived from the maze geometry.

    Each free cell next to a barrier gets structural zeros at the columns of
    the barrier cells it borders.  Masks already present in ``base`` are
    merged in.
    """
    if base.size != spec.n_states:
        raise ConfigurationError(
            f"ensemble size {base.size} does not match maze with {spec.n_states} cells")
    if not spec.barriers:
        return base
    n = spec.n_states
    zeros: dict[int, set[int]] = {}
    for info in base.informative:
        zeros[info.row] = set(info.masked_columns(n).tolist())
    blocked = spec.barrier_states
    for b in sorted(blocked):
        br, bc = divmod(b, spec.width)
        for _, dr, dc in ACTIONS:
            r, c = br + dr, bc + dc
            if 0 <= r < spec.height and 0 <= c < spec.width and r * spec.width + c not in blocked:
                zeros.setdefault(r * spec.width + c, set()).add(b)
    info = tuple(InformativeRow(row, zero_columns=tuple(cols)) for row, cols in sorted(zeros.items()))
    return EnsembleSpec(size=n, informative=info, replicates=base.replicates, seed=base.seed)


def barrier_sweep_specs(width: int, height: int, goal_state: int | None = None,
                        slip_prob: float = 0.1) -> list[tuple[str, MazeSpec]]:
    """Barrier layouts of increasing total width: none, one wall, two offset walls."""
    goal = width - 1 if goal_state is None else goal_state
    r1, r2 = height // 3, (2 * height) // 3
    one = Barrier.band(r1, 0, (2 * width) // 3)
    two = Barrier.band(r2, width - (2 * width) // 3, width)
    layouts = [("none", ()), ("one_barrier", (one,)), ("two_barriers", (one, two))]
    return [(name, MazeSpec(width, height, goal, bars, slip_prob)) for name, bars in layouts]


def render_ascii(spec: MazeSpec, policy: np.ndarray | None = None) -> str:
    """``#`` barrier, ``G`` goal, ``.`` free cell; arrows show greedy actions if given."""
    blocked = spec.barrier_states
    lines = []
    for r in range(spec.height):
        row = []
        for c in range(spec.width):
            s = r * spec.width + c
            if s in blocked:
                row.append("#")
            elif s == spec.goal_state:
                row.append("G")
            elif policy is not None:
                row.append(_ARROWS[int(np.argmax(policy[s]))])
            else:
                row.append(".")
        lines.append("".join(row))
    return "\n".join(lines)
