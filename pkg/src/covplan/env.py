"""Grid-world coverage environment.

Maps are boolean obstacle grids with a start cell. The robot occupies one cell,
moves in either the cardinal action set (up/down/left/right) or the
differential set (forward/rotate left/rotate right), senses the occupancy of
nearby cells with flip noise, and is rewarded +1 for entering an uncovered
cell and ``-overlap_penalty`` for revisits and bumps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, Optional, Tuple

import numpy as np

# belief codes
UNKNOWN = -1
FREE = 0
OBSTACLE = 1

Cell = Tuple[int, int]


class MapError(ValueError):
    pass


class ParseError(MapError):
    pass


class InvalidMap(MapError):
    pass


class GenerationFailed(RuntimeError):
    pass


class EpisodeFinished(RuntimeError):
    pass


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


HEADING_DELTA = {
    Heading.N: (-1, 0),
    Heading.E: (0, 1),
    Heading.S: (1, 0),
    Heading.W: (0, -1),
}


class Cardinal(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


class Differential(IntEnum):
    FORWARD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2


CARDINAL_HEADING = {
    Cardinal.UP: Heading.N,
    Cardinal.DOWN: Heading.S,
    Cardinal.LEFT: Heading.W,
    Cardinal.RIGHT: Heading.E,
}


class Event(Enum):
    NEW_CELL = "new_cell"
    OVERLAP = "overlap"
    BUMP = "bump"
    ROTATE = "rotate"


@dataclass(frozen=True)
class GridMap:
    """Ground-truth occupancy (True = obstacle) and the start cell."""

    obstacles: np.ndarray
    start: Cell

    def __post_init__(self):
        obs = np.asarray(self.obstacles, dtype=bool)
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        validate_map(self)

    @property
    def height(self) -> int:
        return self.obstacles.shape[0]

    @property
    def width(self) -> int:
        return self.obstacles.shape[1]

    @property
    def free_area(self) -> int:
        return int((~self.obstacles).sum())

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, r: int, c: int) -> bool:
        return self.in_bounds(r, c) and not self.obstacles[r, c]

    def to_text(self) -> str:
        rows = []
        for r in range(self.height):
            row = []
            for c in range(self.width):
                if (r, c) == self.start:
                    row.append("S")
                else:
                    row.append("#" if self.obstacles[r, c] else ".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"


def free_component(free: np.ndarray, start: Cell) -> np.ndarray:
    """Boolean mask of free cells 4-connected to ``start``."""
    h, w = free.shape
    seen = np.zeros_like(free, dtype=bool)
    if not free[start]:
        return seen
    seen[start] = True
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                queue.append((nr, nc))
    return seen


def validate_map(grid: GridMap) -> None:
    obs = grid.obstacles
    if obs.ndim != 2 or obs.shape[0] < 1 or obs.shape[1] < 1:
        raise InvalidMap(f"map must be a non-empty 2-D grid, got shape {obs.shape}")
    r, c = grid.start
    if not (0 <= r < obs.shape[0] and 0 <= c < obs.shape[1]):
        raise InvalidMap(f"start {grid.start} out of bounds")
    if obs[r, c]:
        raise InvalidMap(f"start {grid.start} is an obstacle")
    free = ~obs
    if free_component(free, grid.start).sum() != free.sum():
        raise InvalidMap("free space is not 4-connected")


def load_map(text: str) -> GridMap:
    """Parse the ASCII map format: '.' free, '#' obstacle, 'S' start."""
    lines = [ln.rstrip("\r") for ln in text.splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines:
        raise ParseError("empty map")
    width = len(lines[0])
    start = None
    obstacles = np.zeros((len(lines), width), dtype=bool)
    for r, line in enumerate(lines):
        if len(line) != width:
            raise ParseError(f"ragged row {r}: length {len(line)} != {width}")
        for c, ch in enumerate(line):
            if ch == "#":
                obstacles[r, c] = True
            elif ch == "S":
                if start is not None:
                    raise ParseError("more than one start cell")
                start = (r, c)
            elif ch != ".":
                raise ParseError(f"bad character {ch!r} at row {r}, col {c}")
    if start is None:
        raise ParseError("no start cell 'S'")
    return GridMap(obstacles, start)


def load_map_file(path) -> GridMap:
    with open(path, encoding="utf-8") as fh:
        return load_map(fh.read())


@dataclass
class MapGenParams:
    width: int
    height: int
    obstacle_density: float = 0.2
    obstacle_shape: str = "cells"  # or "rectangles"
    max_rect_w: int = 3
    max_rect_h: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if not 0.0 <= self.obstacle_density <= 0.4:
            raise ValueError("obstacle_density must lie in [0, 0.4]")
        if self.obstacle_shape not in ("cells", "rectangles"):
            raise ValueError(f"unknown obstacle_shape {self.obstacle_shape!r}")


MAX_GENERATION_ATTEMPTS = 1000


def generate_map(params: MapGenParams) -> GridMap:
    """Random obstacle placement with rejection until free space is connected."""
    rng = np.random.default_rng(params.seed)
    h, w = params.height, params.width
    target = int(round(params.obstacle_density * h * w))
    for _ in range(MAX_GENERATION_ATTEMPTS):
        obs = np.zeros((h, w), dtype=bool)
        while obs.sum() < target:
            if params.obstacle_shape == "cells":
                obs[rng.integers(h), rng.integers(w)] = True
            else:
                rh = int(rng.integers(1, params.max_rect_h + 1))
                rw = int(rng.integers(1, params.max_rect_w + 1))
                r0 = int(rng.integers(h))
                c0 = int(rng.integers(w))
                obs[r0:r0 + rh, c0:c0 + rw] = True
        free_cells = np.argwhere(~obs)
        if len(free_cells) == 0:
            continue
        start = tuple(int(v) for v in free_cells[rng.integers(len(free_cells))])
        if free_component(~obs, start).sum() == len(free_cells):
            return GridMap(obs, start)
    raise GenerationFailed(
        f"no connected {h}x{w} map at density {params.obstacle_density} "
        f"after {MAX_GENERATION_ATTEMPTS} attempts"
    )


@dataclass
class ActionSet:
    mode: str = "cardinal"  # or "differential"
    action_cost: Optional[Dict[int, float]] = None

    def __post_init__(self):
        if self.mode not in ("cardinal", "differential"):
            raise ValueError(f"unknown action mode {self.mode!r}")
        actions = self.actions
        if self.action_cost is None:
            self.action_cost = {int(a): 0.0 for a in actions}
        else:
            self.action_cost = {int(k): float(v) for k, v in self.action_cost.items()}
        if set(self.action_cost) != {int(a) for a in actions}:
            raise ValueError("action_cost keys must cover exactly the active actions")
        if any(v < 0 for v in self.action_cost.values()):
            raise ValueError("action costs must be nonnegative")

    @property
    def actions(self):
        return list(Cardinal) if self.mode == "cardinal" else list(Differential)

    @property
    def n_actions(self) -> int:
        return 4 if self.mode == "cardinal" else 3


@dataclass
class SensorModel:
    flip_prob: float = 0.0
    range: int = 1

    def __post_init__(self):
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5)")
        if self.range < 1:
            raise ValueError("sensor range must be >= 1")


@dataclass
class EpisodeConfig:
    eta: float = 0.90
    step_cap: int = 1000
    overlap_penalty: float = 0.5
    # None reuses overlap_penalty for collisions
    bump_penalty: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.overlap_penalty < 0:
            raise ValueError("overlap_penalty must be >= 0")
        if self.step_cap < 1:
            raise ValueError("step_cap must be positive")

    @property
    def bump_cost(self) -> float:
        return self.overlap_penalty if self.bump_penalty is None else self.bump_penalty


@dataclass
class Pose:
    row: int
    col: int
    heading: Heading = Heading.N


@dataclass
class StepOutcome:
    reward: float
    done: bool
    event: Event


@dataclass
class EnvState:
    """Full simulator state; ``map`` is hidden from the agent."""

    map: GridMap
    cfg: EpisodeConfig
    sensor: SensorModel
    actions: ActionSet
    pose: Pose
    visit_count: np.ndarray
    belief: np.ndarray
    # cells whose belief is fixed: visited (free) or bumped (obstacle)
    confirmed: np.ndarray
    rng: np.random.Generator
    steps: int = 0
    covered: int = 1
    total_return: float = 0.0
    done: bool = False
    counts: Dict[str, int] = field(default_factory=lambda: {e.value: 0 for e in Event})

    # -- metrics -----------------------------------------------------------
    def coverage_fraction(self) -> float:
        return self.covered / self.map.free_area

    def overlap_fraction(self) -> float:
        extra = int(np.maximum(self.visit_count - 1, 0).sum())
        return extra / self.map.free_area

    @property
    def position(self) -> Cell:
        return (self.pose.row, self.pose.col)

    def _check_done(self) -> bool:
        return self.coverage_fraction() >= self.cfg.eta or self.steps >= self.cfg.step_cap

    # -- dynamics ----------------------------------------------------------
    def sense(self) -> None:
        """Noisy occupancy reading of all in-bounds cells within range."""
        grid = self.map
        rho = self.sensor.flip_prob
        rng_ = self.sensor.range
        r0, c0 = self.pose.row, self.pose.col
        for dr in range(-rng_, rng_ + 1):
            span = rng_ - abs(dr)
            for dc in range(-span, span + 1):
                if dr == 0 and dc == 0:
                    continue
                r, c = r0 + dr, c0 + dc
                if not grid.in_bounds(r, c):
                    continue
                truth = OBSTACLE if grid.obstacles[r, c] else FREE
                reading = truth
                if rho > 0.0 and self.rng.random() < rho:
                    reading = FREE if truth == OBSTACLE else OBSTACLE
                if not self.confirmed[r, c]:
                    self.belief[r, c] = reading

    def _target(self, heading: Heading) -> Cell:
        dr, dc = HEADING_DELTA[heading]
        return self.pose.row + dr, self.pose.col + dc

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EpisodeFinished("step() called after the episode ended")
        action = int(action)
        if action not in self.actions.action_cost:
            raise ValueError(f"action {action} not in the active action set")
        cost = self.actions.action_cost[action]
        if self.actions.mode == "differential" and action != Differential.FORWARD:
            turn = -1 if action == Differential.ROTATE_LEFT else 1
            self.pose.heading = Heading((self.pose.heading + turn) % 4)
            reward, event = -cost, Event.ROTATE
        else:
            if self.actions.mode == "cardinal":
                heading = CARDINAL_HEADING[Cardinal(action)]
                self.pose.heading = heading
            else:
                heading = self.pose.heading
            r, c = self._target(heading)
            if self.map.is_free(r, c):
                self.pose.row, self.pose.col = r, c
                if self.visit_count[r, c] == 0:
                    reward, event = 1.0 - cost, Event.NEW_CELL
                    self.covered += 1
                else:
                    reward, event = -self.cfg.overlap_penalty - cost, Event.OVERLAP
                self.visit_count[r, c] += 1
                self.belief[r, c] = FREE
                self.confirmed[r, c] = True
            else:
                reward, event = -self.cfg.bump_cost - cost, Event.BUMP
                if self.map.in_bounds(r, c):
                    self.belief[r, c] = OBSTACLE
                    self.confirmed[r, c] = True
        self.sense()
        self.steps += 1
        self.total_return += reward
        self.counts[event.value] += 1
        self.done = self._check_done()
        return StepOutcome(reward, self.done, event)

    def snapshot(self) -> "EnvState":
        """Independent copy (including the RNG stream)."""
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return EnvState(
            map=self.map,
            cfg=self.cfg,
            sensor=self.sensor,
            actions=self.actions,
            pose=Pose(self.pose.row, self.pose.col, self.pose.heading),
            visit_count=self.visit_count.copy(),
            belief=self.belief.copy(),
            confirmed=self.confirmed.copy(),
            rng=rng,
            steps=self.steps,
            covered=self.covered,
            total_return=self.total_return,
            done=self.done,
            counts=dict(self.counts),
        )


def reset(
    grid: GridMap,
    cfg: Optional[EpisodeConfig] = None,
    sensor: Optional[SensorModel] = None,
    actions: Optional[ActionSet] = None,
    seed=None,
) -> EnvState:
    cfg = cfg or EpisodeConfig()
    sensor = sensor or SensorModel()
    actions = actions or ActionSet()
    h, w = grid.height, grid.width
    r, c = grid.start
    visit = np.zeros((h, w), dtype=np.int64)
    visit[r, c] = 1
    belief = np.full((h, w), UNKNOWN, dtype=np.int8)
    belief[r, c] = FREE
    confirmed = np.zeros((h, w), dtype=bool)
    confirmed[r, c] = True
    state = EnvState(
        map=grid,
        cfg=cfg,
        sensor=sensor,
        actions=actions,
        pose=Pose(r, c, Heading.N),
        visit_count=visit,
        belief=belief,
        confirmed=confirmed,
        rng=np.random.default_rng(seed),
    )
    state.sense()
    state.done = state._check_done()
    return state


def step(state: EnvState, action: int) -> Tuple[EnvState, StepOutcome]:
    outcome = state.step(action)
    return state, outcome


def coverage_fraction(state: EnvState) -> float:
    return state.coverage_fraction()


def overlap_fraction(state: EnvState) -> float:
    return state.overlap_fraction()


@dataclass
class CoverageEnv:
    """Episode factory bundling a map with its configuration."""

    map: GridMap
    cfg: EpisodeConfig = field(default_factory=EpisodeConfig)
    sensor: SensorModel = field(default_factory=SensorModel)
    actions: ActionSet = field(default_factory=ActionSet)

    def reset(self, seed=None) -> EnvState:
        return reset(self.map, self.cfg, self.sensor, self.actions, seed)

    @property
    def n_actions(self) -> int:
        return self.actions.n_actions
