"""Classical coverage controllers and the hybrid zigzag + RL controller.

All planners act on the robot's belief map, never on ground truth. A* treats
unknown cells as traversable at unit cost.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from covplan.env import (
    FREE,
    OBSTACLE,
    Cardinal,
    Cell,
    Differential,
    EnvState,
    Event,
    Heading,
    HEADING_DELTA,
)
from covplan.replay import Transition

BLOCKED = None

_HEADING_TO_CARDINAL = {
    Heading.N: Cardinal.UP,
    Heading.S: Cardinal.DOWN,
    Heading.W: Cardinal.LEFT,
    Heading.E: Cardinal.RIGHT,
}
_OPPOSITE = {Heading.N: Heading.S, Heading.S: Heading.N, Heading.E: Heading.W, Heading.W: Heading.E}


class Unreachable(Exception):
    pass


class NoCandidates(Exception):
    pass


@dataclass
class EpisodeResult:
    coverage_pct: float
    overlap_pct: float
    steps: int
    total_return: float
    reason: str  # "eta", "step_cap" or "no_candidates"
    rl_decisions: int = 0

    @classmethod
    def from_state(cls, state: EnvState, reason: Optional[str] = None, rl_decisions: int = 0):
        if reason is None:
            reason = "eta" if state.coverage_fraction() >= state.cfg.eta else "step_cap"
        return cls(
            coverage_pct=100.0 * state.coverage_fraction(),
            overlap_pct=100.0 * state.overlap_fraction(),
            steps=state.steps,
            total_return=state.total_return,
            reason=reason,
            rl_decisions=rl_decisions,
        )


# ---------------------------------------------------------------------------
# zigzag


@dataclass
class ZigzagState:
    lane: Heading  # N or S
    sweep: Heading  # E or W

    @classmethod
    def initial(cls, state: EnvState) -> "ZigzagState":
        """Vertical lanes heading away from the nearest horizontal wall."""
        h, w = state.map.height, state.map.width
        r, c = state.position
        lane = Heading.S if r <= h - 1 - r else Heading.N
        sweep = Heading.E if c <= w - 1 - c else Heading.W
        return cls(lane, sweep)


def _open_unvisited(state: EnvState, heading: Heading) -> bool:
    dr, dc = HEADING_DELTA[heading]
    r, c = state.pose.row + dr, state.pose.col + dc
    if not state.map.in_bounds(r, c):
        return False
    return state.belief[r, c] == FREE and state.visit_count[r, c] == 0


def zigzag_direction(state: EnvState, z: ZigzagState) -> Optional[Tuple[Heading, ZigzagState]]:
    """Next boustrophedon heading and the lane state to adopt once moved."""
    if _open_unvisited(state, z.lane):
        return z.lane, z
    back = _OPPOSITE[z.lane]
    if _open_unvisited(state, back):
        return back, ZigzagState(back, z.sweep)
    if _open_unvisited(state, z.sweep):
        return z.sweep, ZigzagState(back, z.sweep)
    if _open_unvisited(state, _OPPOSITE[z.sweep]):
        return _OPPOSITE[z.sweep], ZigzagState(back, z.sweep)
    return None


def move_action(state: EnvState, heading: Heading) -> int:
    """Primitive action that makes progress toward moving along ``heading``."""
    if state.actions.mode == "cardinal":
        return int(_HEADING_TO_CARDINAL[heading])
    diff = (int(heading) - int(state.pose.heading)) % 4
    if diff == 0:
        return int(Differential.FORWARD)
    if diff == 3:
        return int(Differential.ROTATE_LEFT)
    return int(Differential.ROTATE_RIGHT)


def is_move(state: EnvState, action: int) -> bool:
    return state.actions.mode == "cardinal" or action == Differential.FORWARD


def zigzag_step(state: EnvState, z: ZigzagState):
    """Action to take, or ``BLOCKED`` when no believed-free unvisited
    neighbour exists. ``z`` is updated in place when the action is a move."""
    nxt = zigzag_direction(state, z)
    if nxt is None:
        return BLOCKED
    heading, new_z = nxt
    action = move_action(state, heading)
    if is_move(state, action):
        z.lane, z.sweep = new_z.lane, new_z.sweep
    return action


# ---------------------------------------------------------------------------
# A* and backtracking


def _neighbours(r, c, h, w):
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = r + dr, c + dc
        if 0 <= nr < h and 0 <= nc < w:
            yield nr, nc


def astar(belief: np.ndarray, start: Cell, goal: Cell, allow_goal: bool = False) -> List[Cell]:
    """Shortest 4-connected path on the belief map, unit step cost.

    Obstacle cells are impassable; unknown cells are optimistic free space.
    Ties in f are broken by (row, col). ``allow_goal`` lets the goal itself be
    a believed obstacle (used to re-check suspected obstacles).
    """
    h, w = belief.shape
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    if belief[start] == OBSTACLE:
        raise ValueError(f"start {start} is a believed obstacle")
    if belief[goal] == OBSTACLE and not allow_goal:
        raise Unreachable(f"goal {goal} is a believed obstacle")
    g = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    parent = {}
    g[start] = 0
    gr, gc = goal
    heap = [(abs(start[0] - gr) + abs(start[1] - gc), start[0], start[1])]
    closed = np.zeros((h, w), dtype=bool)
    while heap:
        _, r, c = heapq.heappop(heap)
        if closed[r, c]:
            continue
        if (r, c) == goal:
            path = [goal]
            while path[-1] != start:
                path.append(parent[path[-1]])
            return path[::-1]
        closed[r, c] = True
        for nr, nc in _neighbours(r, c, h, w):
            if closed[nr, nc] or (belief[nr, nc] == OBSTACLE and (nr, nc) != goal):
                continue
            ng = g[r, c] + 1
            if ng < g[nr, nc]:
                g[nr, nc] = ng
                parent[(nr, nc)] = (r, c)
                heapq.heappush(heap, (ng + abs(nr - gr) + abs(nc - gc), nr, nc))
    raise Unreachable(f"no path from {start} to {goal}")


def path_cost(path: List[Cell]) -> int:
    return len(path) - 1


def backtrack_candidates(state: EnvState) -> List[Cell]:
    """Visited cells with at least one believed-free, unvisited neighbour."""
    open_ = (state.belief == FREE) & (state.visit_count == 0)
    nb = np.zeros_like(open_)
    nb[1:, :] |= open_[:-1, :]
    nb[:-1, :] |= open_[1:, :]
    nb[:, 1:] |= open_[:, :-1]
    nb[:, :-1] |= open_[:, 1:]
    mask = (state.visit_count > 0) & nb
    return [(int(r), int(c)) for r, c in np.argwhere(mask)]


def bfs_distances(belief: np.ndarray, start: Cell) -> np.ndarray:
    h, w = belief.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for nr, nc in _neighbours(r, c, h, w):
            if dist[nr, nc] < 0 and belief[nr, nc] != OBSTACLE:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist


def suspect_cells(state: EnvState) -> List[Cell]:
    """Unconfirmed believed obstacles next to a visited cell.

    Under sensing noise some of these are free space misread as walls. When
    no backtracking point is reachable, BA* drives into the nearest one: it
    either enters a new cell or bumps, which confirms the obstacle.
    """
    sus = (state.belief == OBSTACLE) & ~state.confirmed
    visited = state.visit_count > 0
    nb = np.zeros_like(visited)
    nb[1:, :] |= visited[:-1, :]
    nb[:-1, :] |= visited[1:, :]
    nb[:, 1:] |= visited[:, :-1]
    nb[:, :-1] |= visited[:, 1:]
    return [(int(r), int(c)) for r, c in np.argwhere(sus & nb)]


def nearest_suspect(state: EnvState, suspects: List[Cell]) -> Tuple[Cell, List[Cell]]:
    if not suspects:
        raise NoCandidates("no suspected obstacles to re-check")
    dist = bfs_distances(state.belief, state.position)
    best = None
    for cell in suspects:
        d = [dist[n] for n in _neighbours(*cell, *state.belief.shape) if dist[n] >= 0]
        if d and (best is None or (min(d), cell) < best):
            best = (min(d), cell)
    if best is None:
        raise NoCandidates("no reachable suspected obstacle")
    return best[1], astar(state.belief, state.position, best[1], allow_goal=True)


def nearest_backtrack(state: EnvState, candidates: List[Cell]) -> Tuple[Cell, List[Cell]]:
    """Candidate with the smallest path cost (ties by (row, col)) and the path."""
    if not candidates:
        raise NoCandidates("no backtracking points")
    dist = bfs_distances(state.belief, state.position)
    reachable = [(int(dist[c]), c) for c in candidates if dist[c] >= 0]
    if not reachable:
        raise NoCandidates("no reachable backtracking point")
    _, goal = min(reachable)
    return goal, astar(state.belief, state.position, goal)


# ---------------------------------------------------------------------------
# episode drivers


def _heading_to(src: Cell, dst: Cell) -> Heading:
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    for h, d in HEADING_DELTA.items():
        if d == (dr, dc):
            return h
    raise ValueError(f"{dst} is not adjacent to {src}")


def zigzag_episode(state: EnvState) -> EpisodeResult:
    """Pure zigzag until blocked (no repositioning)."""
    z = ZigzagState.initial(state)
    while not state.done:
        action = zigzag_step(state, z)
        if action is BLOCKED:
            return EpisodeResult.from_state(state, "no_candidates")
        state.step(action)
    return EpisodeResult.from_state(state)


def follow_path(state: EnvState, path: List[Cell], probe_goal: bool = False) -> bool:
    """Drive along ``path`` (excluding the current cell) until done, arrival
    or a reason to replan. Returns True on arrival. With ``probe_goal`` the
    last cell may be a believed obstacle."""
    remaining = list(path[1:]) if path and path[0] == state.position else list(path)
    goal = remaining[-1] if remaining else None
    while remaining and not state.done:
        if any(state.belief[c] == OBSTACLE and not (probe_goal and c == goal) for c in remaining):
            return False
        nxt = remaining[0]
        action = move_action(state, _heading_to(state.position, nxt))
        before = state.belief.copy()
        outcome = state.step(action)
        if outcome.event == Event.BUMP:
            return False
        if state.position == nxt:
            remaining.pop(0)
        if remaining and any(before[c] != state.belief[c] for c in remaining):
            return False
    return not remaining


def ba_star_episode(state: EnvState) -> EpisodeResult:
    """Zigzag until blocked, then A* to the nearest backtracking point.

    If no backtracking point is reachable, the nearest suspected obstacle is
    re-checked before giving up.
    """
    z = ZigzagState.initial(state)
    while not state.done:
        action = zigzag_step(state, z)
        if action is not BLOCKED:
            state.step(action)
            continue
        try:
            _, path = nearest_backtrack(state, backtrack_candidates(state))
            follow_path(state, path)
            continue
        except NoCandidates:
            pass
        try:
            _, path = nearest_suspect(state, suspect_cells(state))
        except NoCandidates:
            return EpisodeResult.from_state(state, "no_candidates")
        follow_path(state, path, probe_goal=True)
    return EpisodeResult.from_state(state)


def hybrid_episode(state: EnvState, agent, training: bool = False, epsilon: Optional[float] = None):
    """Zigzag while free space surrounds the robot; the RL policy repositions.

    While training, each zigzag segment becomes one macro transition
    (segment start, first action, summed reward, state when blocked) and each
    RL step is stored as an ordinary transition. Returns the episode result
    and the list of transitions handed to the agent.
    """
    enc = agent.encoder
    z = ZigzagState.initial(state)
    stored: List[Transition] = []
    decisions = 0
    seg_obs = seg_action = None
    seg_reward = 0.0

    def close_segment():
        nonlocal seg_obs, seg_action, seg_reward
        if seg_obs is not None and training:
            t = Transition(seg_obs, seg_action, seg_reward, enc.observe(state), state.done)
            agent.remember(t)
            stored.append(t)
        seg_obs, seg_action, seg_reward = None, None, 0.0

    while not state.done:
        action = zigzag_step(state, z)
        if action is not BLOCKED:
            if seg_obs is None:
                seg_obs, seg_action = (enc.observe(state) if training else True), action
            seg_reward += state.step(action).reward
            continue
        close_segment()
        covered_before = state.covered
        while not state.done and state.covered == covered_before:
            obs = enc.observe(state)
            eps = agent.current_epsilon() if (training and epsilon is None) else (epsilon or 0.0)
            a = agent.act(enc.to_input(obs), eps)
            outcome = state.step(a)
            decisions += 1
            if training:
                t = Transition(obs, a, outcome.reward, enc.observe(state), outcome.done)
                agent.remember(t)
                stored.append(t)
    close_segment()
    return EpisodeResult.from_state(state, rl_decisions=decisions), stored
