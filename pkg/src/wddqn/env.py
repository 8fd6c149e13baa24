"""Benchmark games: a noisy pacman-like gridworld and a two-predator pursuit game.

Both games are pure step functions over immutable state objects. All randomness
comes from an explicitly passed ``numpy.random.Generator``.

Coordinates are ``(row, col)`` with the origin at the top-left cell.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np


class Action(IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3


N_ACTIONS = len(Action)

_DELTAS = {
    Action.NORTH: (-1, 0),
    Action.SOUTH: (1, 0),
    Action.EAST: (0, 1),
    Action.WEST: (0, -1),
}


class GridPos(NamedTuple):
    row: int
    col: int


class EnvError(Exception):
    pass


class TerminalStateError(EnvError):
    """Raised when stepping a state that has already ended."""


class UnreachableGoalError(EnvError):
    pass


class MapError(ValueError):
    pass


class ShapeError(MapError):
    pass


class UnknownGlyphError(MapError):
    pass


class MissingGoal(MapError):
    pass


class DuplicateMarker(MapError):
    pass


class MissingStart(MapError):
    pass


class UnreachableGoal(MapError):
    pass


@dataclass(frozen=True)
class RewardSpec:
    """Discrete reward distribution; a single value means deterministic."""

    values: tuple[float, ...]
    probs: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must be non-empty and equally long")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {self.probs}")

    @classmethod
    def constant(cls, value: float) -> "RewardSpec":
        return cls((float(value),), (1.0,))

    @property
    def mean(self) -> float:
        return float(sum(v * p for v, p in zip(self.values, self.probs)))

    def sample(self, rng: np.random.Generator) -> float:
        if len(self.values) == 1:
            return self.values[0]
        u = rng.random()
        acc = 0.0
        for v, p in zip(self.values, self.probs):
            acc += p
            if u < acc:
                return v
        return self.values[-1]


@dataclass(frozen=True)
class StepResult:
    next_state: object
    reward: float
    terminal: bool
    info: str  # one of: goal, miscoordination, step, timeout


def _move(pos: GridPos, action: int, height: int, width: int) -> GridPos:
    dr, dc = _DELTAS[Action(action)]
    r, c = pos.row + dr, pos.col + dc
    if 0 <= r < height and 0 <= c < width:
        return GridPos(r, c)
    return pos


# ---------------------------------------------------------------------------
# Pacman-like gridworld
# ---------------------------------------------------------------------------

GOAL_RANDOM = "random"
GOAL_FIXED = "fixed"


def _default_step_rewards() -> dict:
    north_west = RewardSpec((-10.0, 6.0), (0.5, 0.5))
    south_east = RewardSpec((-8.0, 6.0), (0.5, 0.5))
    return {
        Action.NORTH: north_west,
        Action.WEST: north_west,
        Action.SOUTH: south_east,
        Action.EAST: south_east,
    }


@dataclass(frozen=True)
class PacmanConfig:
    size: int = 5
    goal_mode: str = GOAL_RANDOM
    max_steps: int | None = None  # None -> 4 * size**2
    goal_reward: RewardSpec = RewardSpec((-30.0, 40.0), (0.5, 0.5))
    step_rewards: dict = field(default_factory=_default_step_rewards)

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("pacman grid size must be >= 2")
        if self.goal_mode not in (GOAL_RANDOM, GOAL_FIXED):
            raise ValueError(f"unknown goal_mode {self.goal_mode!r}")
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", 4 * self.size**2)
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if set(self.step_rewards) != set(Action):
            raise ValueError("step_rewards needs one RewardSpec per action")

    @property
    def input_dim(self) -> int:
        return 2 * self.size * self.size


@dataclass(frozen=True)
class PacmanState:
    agent: GridPos
    goal: GridPos
    steps_taken: int = 0
    terminal: bool = False


def pacman_reset(config: PacmanConfig, rng: np.random.Generator) -> PacmanState:
    n = config.size
    if config.goal_mode == GOAL_FIXED:
        goal = GridPos(n - 1, n - 1)
    else:
        # cell 0 is the start, so draw from 1..n*n-1
        k = int(rng.integers(1, n * n))
        goal = GridPos(k // n, k % n)
    return PacmanState(GridPos(0, 0), goal, 0, False)


def pacman_step(state: PacmanState, action: int, config: PacmanConfig,
                rng: np.random.Generator) -> StepResult:
    if state.terminal:
        raise TerminalStateError("pacman episode already ended; call pacman_reset")
    action = Action(action)
    pos = _move(state.agent, action, config.size, config.size)
    steps = state.steps_taken + 1
    if pos == state.goal:
        reward = config.goal_reward.sample(rng)
        return StepResult(PacmanState(pos, state.goal, steps, True), reward, True, "goal")
    reward = config.step_rewards[action].sample(rng)
    timeout = steps >= config.max_steps
    nxt = PacmanState(pos, state.goal, steps, timeout)
    return StepResult(nxt, reward, timeout, "timeout" if timeout else "step")


# ---------------------------------------------------------------------------
# Two-predator pursuit game
# ---------------------------------------------------------------------------


class Cell(str, Enum):
    FLOOR = "."
    WALL = "#"
    GOAL_S = "S"
    GOAL_G = "G"
    START1 = "1"
    START2 = "2"


@dataclass(frozen=True)
class Layout:
    height: int
    width: int
    cells: tuple[tuple[Cell, ...], ...]

    def __getitem__(self, pos) -> Cell:
        return self.cells[pos[0]][pos[1]]

    def find(self, kind: Cell) -> list[GridPos]:
        return [GridPos(r, c) for r, row in enumerate(self.cells)
                for c, cell in enumerate(row) if cell is kind]

    @property
    def goal_s(self) -> GridPos:
        return self.find(Cell.GOAL_S)[0]

    @property
    def goal_g(self) -> GridPos:
        return self.find(Cell.GOAL_G)[0]

    @property
    def starts(self) -> tuple[GridPos, GridPos]:
        return self.find(Cell.START1)[0], self.find(Cell.START2)[0]

    def is_goal(self, pos) -> bool:
        return self[pos] in (Cell.GOAL_S, Cell.GOAL_G)

    def step(self, pos: GridPos, action: int) -> GridPos:
        nxt = _move(pos, action, self.height, self.width)
        return pos if self[nxt] is Cell.WALL else nxt

    def distances(self, source: GridPos) -> dict[GridPos, int]:
        """Breadth-first shortest-path lengths from ``source`` over non-wall cells."""
        dist = {source: 0}
        queue = deque([source])
        while queue:
            p = queue.popleft()
            for a in Action:
                q = self.step(p, a)
                if q not in dist:
                    dist[q] = dist[p] + 1
                    queue.append(q)
        return dist

    def to_text(self) -> str:
        return "\n".join("".join(c.value for c in row) for row in self.cells)


def load_map(text: str) -> Layout:
    """Parse an ASCII map and check its invariants.

    Glyphs: ``#`` wall, ``.`` floor, ``S``/``G`` sub-optimal/optimal goal,
    ``1``/``2`` predator starts. Blank leading/trailing lines are ignored.
    """
    rows = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    if not rows or not rows[0]:
        raise ShapeError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ShapeError(f"ragged map rows: lengths {[len(r) for r in rows]}")
    try:
        cells = tuple(tuple(Cell(ch) for ch in r) for r in rows)
    except ValueError as exc:
        raise UnknownGlyphError(str(exc)) from None
    layout = Layout(len(rows), width, cells)

    for kind, missing_err in ((Cell.GOAL_S, MissingGoal), (Cell.GOAL_G, MissingGoal),
                              (Cell.START1, MissingStart), (Cell.START2, MissingStart)):
        found = layout.find(kind)
        if not found:
            raise missing_err(f"map has no {kind.value!r} cell")
        if len(found) > 1:
            raise DuplicateMarker(f"map has {len(found)} {kind.value!r} cells")

    for start in layout.starts:
        reach = layout.distances(start)
        if layout.goal_s not in reach and layout.goal_g not in reach:
            raise UnreachableGoal(f"no goal reachable from start {tuple(start)}")
    return layout


def load_map_file(path) -> Layout:
    with open(path, encoding="utf-8") as fh:
        return load_map(fh.read())


def default_layout() -> Layout:
    text = resources.files("wddqn").joinpath("maps/default.map").read_text(encoding="utf-8")
    return load_map(text)


@dataclass(frozen=True)
class PredatorConfig:
    layout: Layout = field(default_factory=default_layout)
    reward_s: RewardSpec = RewardSpec.constant(10.0)
    reward_g: RewardSpec = RewardSpec.constant(80.0)
    miscoordination_penalty: float = -1.0
    nongoal_reward: float = 0.0
    max_steps: int = 200

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def input_dim(self) -> int:
        return 2 * self.layout.height * self.layout.width


def predator_config(stochastic: bool = False, **kwargs) -> PredatorConfig:
    """Deterministic game (S=+10, G=+80) or the stochastic-S variant (S=+10 w.p. 0.6, +100 w.p. 0.4)."""
    if stochastic:
        kwargs.setdefault("reward_s", RewardSpec((10.0, 100.0), (0.6, 0.4)))
    return PredatorConfig(**kwargs)


@dataclass(frozen=True)
class PredatorState:
    agents: tuple[GridPos, GridPos]
    steps_taken: int = 0
    terminal: bool = False


def predator_reset(config: PredatorConfig) -> PredatorState:
    return PredatorState(config.layout.starts, 0, False)


def predator_step(state: PredatorState, joint: Sequence[int], config: PredatorConfig,
                  rng: np.random.Generator) -> StepResult:
    if state.terminal:
        raise TerminalStateError("predator episode already ended; call predator_reset")
    layout = config.layout
    prev = state.agents
    moved = [layout.step(p, a) for p, a in zip(prev, joint)]
    steps = state.steps_taken + 1

    if moved[0] == moved[1] and layout.is_goal(moved[0]):
        spec = config.reward_g if layout[moved[0]] is Cell.GOAL_G else config.reward_s
        nxt = PredatorState((moved[0], moved[1]), steps, True)
        return StepResult(nxt, spec.sample(rng), True, "goal")

    info, reward = "step", config.nongoal_reward
    on_goal = [layout.is_goal(p) for p in moved]
    if any(on_goal):
        # lone entrants are sent back to where they came from
        moved = [prev[i] if on_goal[i] else moved[i] for i in range(2)]
        info, reward = "miscoordination", config.miscoordination_penalty
    swapped = moved[0] == prev[1] and moved[1] == prev[0]
    if moved[0] == moved[1] or swapped:
        moved = list(prev)

    timeout = steps >= config.max_steps
    if timeout:
        info = "timeout"
    return StepResult(PredatorState((moved[0], moved[1]), steps, timeout), reward, timeout, info)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def encode_observation(state, config) -> np.ndarray:
    """One-hot encoding: one block of ``height*width`` entries per entity."""
    if isinstance(state, PacmanState):
        n = config.size
        vec = np.zeros(2 * n * n)
        vec[state.agent.row * n + state.agent.col] = 1.0
        vec[n * n + state.goal.row * n + state.goal.col] = 1.0
        return vec
    if isinstance(state, PredatorState):
        h, w = config.layout.height, config.layout.width
        vec = np.zeros(2 * h * w)
        for i, p in enumerate(state.agents):
            vec[i * h * w + p.row * w + p.col] = 1.0
        return vec
    raise TypeError(f"cannot encode {type(state).__name__}")


def state_key(state) -> tuple:
    """Hashable identity of a state for tabular look-ups (step counter excluded)."""
    if isinstance(state, PacmanState):
        return (state.agent, state.goal)
    if isinstance(state, PredatorState):
        return state.agents
    raise TypeError(f"no key for {type(state).__name__}")


def min_steps(state, config) -> int:
    """Fewest steps needed to finish the episode from ``state``.

    For the predator game both agents must meet on the same goal, so this is the
    smallest, over goals reachable by both, of the slower agent's BFS distance.
    """
    if isinstance(state, PacmanState):
        return abs(state.agent.row - state.goal.row) + abs(state.agent.col - state.goal.col)
    if isinstance(state, PredatorState):
        layout = config.layout
        dists = [layout.distances(p) for p in state.agents]
        options = [max(d[g] for d in dists)
                   for g in (layout.goal_s, layout.goal_g)
                   if all(g in d for d in dists)]
        if not options:
            raise UnreachableGoalError("no goal is reachable by both agents")
        return min(options)
    raise TypeError(f"unsupported state {type(state).__name__}")
