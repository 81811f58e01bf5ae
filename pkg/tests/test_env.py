from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covplan.env import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    ActionSet,
    Cardinal,
    CoverageEnv,
    Differential,
    EpisodeConfig,
    EpisodeFinished,
    Event,
    GridMap,
    Heading,
    InvalidMap,
    MapGenParams,
    ParseError,
    SensorModel,
    generate_map,
    load_map,
    reset,
    step,
)
from covplan.harness import resolve_map_path


def flood_fill_count(free, start):
    """Independent BFS oracle: size of the 4-connected component of start."""
    h, w = len(free), len(free[0])
    seen = {start}
    q = deque([start])
    while q:
        r, c = q.popleft()
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if 0 <= nr < h and 0 <= nc < w and free[nr][nc] and (nr, nc) not in seen:
                seen.add((nr, nc))
                q.append((nr, nc))
    return len(seen)


def empty(n, m=None, start=(0, 0)):
    return GridMap(np.zeros((n, m or n), dtype=bool), start)


# -- maps -------------------------------------------------------------------


def test_generate_zero_density_is_all_free():
    g = generate_map(MapGenParams(5, 5, obstacle_density=0.0, seed=3))
    assert g.free_area == 25
    assert not g.obstacles.any()


@pytest.mark.parametrize("shape", ["cells", "rectangles"])
def test_generate_deterministic(shape):
    p = MapGenParams(12, 9, obstacle_density=0.3, obstacle_shape=shape, seed=11)
    a, b = generate_map(p), generate_map(p)
    assert np.array_equal(a.obstacles, b.obstacles) and a.start == b.start


@pytest.mark.parametrize("shape", ["cells", "rectangles"])
def test_generated_free_space_connected(shape):
    g = generate_map(MapGenParams(15, 15, obstacle_density=0.2, obstacle_shape=shape, seed=7))
    free = (~g.obstacles).tolist()
    assert flood_fill_count(free, g.start) == g.free_area
    assert g.obstacles.sum() >= round(0.2 * 225)
    assert not g.obstacles[g.start]


def test_generator_rejects_bad_density():
    with pytest.raises(ValueError):
        MapGenParams(5, 5, obstacle_density=0.5)


def test_load_small_map():
    g = load_map("S.\n..")
    assert (g.height, g.width) == (2, 2)
    assert g.start == (0, 0) and g.free_area == 4


def test_load_isolated_start_is_connected_when_alone():
    g = load_map("S#\n##")
    assert g.free_area == 1


@pytest.mark.parametrize("text", ["S#\n#.", ".#S\n#..\n..#"])
def test_load_disconnected(text):
    with pytest.raises(InvalidMap):
        load_map(text)


@pytest.mark.parametrize("text", ["S.\n...", "S.x\n...", "..\n..", "SS\n.."])
def test_load_parse_errors(text):
    with pytest.raises(ParseError):
        load_map(text)


def test_start_on_obstacle_rejected():
    with pytest.raises(InvalidMap):
        GridMap(np.ones((2, 2), dtype=bool), (0, 0))


@pytest.mark.parametrize("name", ["maze15_a.txt", "maze15_b.txt", "maze17_a.txt", "maze19_b.txt", "maze7.txt"])
def test_fixture_free_count_matches_text(name):
    text = resolve_map_path(name).read_text()
    rows = text.split()
    hand_count = sum(row.count(".") + row.count("S") for row in rows)
    g = load_map(text)
    assert g.free_area == hand_count
    assert g.to_text() == "\n".join(rows) + "\n"


def test_fixture_sizes():
    assert load_map(resolve_map_path("maze15_b.txt").read_text()).obstacles.shape == (15, 15)
    assert load_map(resolve_map_path("maze19_b.txt").read_text()).obstacles.shape == (19, 19)


# -- reset / step -----------------------------------------------------------


def test_reset_coverage_is_one_cell():
    g = load_map(resolve_map_path("maze7.txt").read_text())
    s = reset(g)
    assert s.coverage_fraction() == pytest.approx(1 / g.free_area)
    assert s.overlap_fraction() == 0.0
    assert s.visit_count.sum() == 1 and s.visit_count[g.start] == 1
    assert s.belief[g.start] == FREE
    assert s.pose.heading == Heading.N and s.steps == 0


def test_one_cell_map_done_at_reset():
    s = reset(empty(1))
    assert s.coverage_fraction() == 1.0 and s.done
    with pytest.raises(EpisodeFinished):
        s.step(Cardinal.UP)


def test_reset_noisy_belief_deterministic():
    g = load_map(resolve_map_path("maze15_a.txt").read_text())
    sensor = SensorModel(flip_prob=0.3)
    a = reset(g, sensor=sensor, seed=5)
    b = reset(g, sensor=sensor, seed=5)
    assert np.array_equal(a.belief, b.belief)


def test_new_cell_reward():
    s = reset(empty(3))
    out = s.step(Cardinal.RIGHT)
    assert out.reward == 1.0 and out.event == Event.NEW_CELL


def test_overlap_reward():
    s = reset(empty(3))
    s.step(Cardinal.RIGHT)
    out = s.step(Cardinal.LEFT)
    assert out.reward == -0.5 and out.event == Event.OVERLAP


def test_forward_into_wall_differential():
    s = reset(empty(3), actions=ActionSet("differential"))
    # heading N at (0, 0): the cell ahead is outside the map
    out = s.step(Differential.FORWARD)
    assert out.reward == -0.5 and out.event == Event.BUMP
    assert s.position == (0, 0)


def test_bump_marks_obstacle():
    g = load_map("S#.\n...")
    s = reset(g, sensor=SensorModel(0.0))
    s.belief[0, 1] = UNKNOWN
    out = s.step(Cardinal.RIGHT)
    assert out.event == Event.BUMP and out.reward == -0.5
    assert s.belief[0, 1] == OBSTACLE
    assert s.position == (0, 0)


def test_rotation_changes_heading_only():
    s = reset(empty(3), actions=ActionSet("differential", {0: 0.0, 1: 0.2, 2: 0.2}))
    out = s.step(Differential.ROTATE_RIGHT)
    assert out.event == Event.ROTATE and out.reward == pytest.approx(-0.2)
    assert s.pose.heading == Heading.E and s.position == (0, 0)
    assert s.visit_count.sum() == 1
    out = s.step(Differential.FORWARD)
    assert s.position == (0, 1) and out.reward == 1.0
    s.step(Differential.ROTATE_LEFT)
    assert s.pose.heading == Heading.N


def test_action_cost_applied():
    s = reset(empty(3), actions=ActionSet("cardinal", {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.25}))
    assert s.step(Cardinal.RIGHT).reward == pytest.approx(0.75)


def test_action_cost_keys_must_match():
    with pytest.raises(ValueError):
        ActionSet("differential", {0: 0.0, 1: 0.0})


def test_step_cap_ends_episode():
    s = reset(empty(4), cfg=EpisodeConfig(step_cap=3))
    for _ in range(3):
        out = s.step(Cardinal.UP)
    assert out.done and s.steps == 3


def test_eta_ends_episode():
    s = reset(empty(1, 4), cfg=EpisodeConfig(eta=0.75))
    s.step(Cardinal.RIGHT)
    assert not s.done
    assert s.step(Cardinal.RIGHT).done


def test_module_step_returns_state():
    s = reset(empty(2))
    s2, out = step(s, Cardinal.DOWN)
    assert s2 is s and out.reward == 1.0


# -- sensing ----------------------------------------------------------------


def test_noiseless_sense_matches_truth():
    g = load_map("..#\n.S.\n#..")
    s = reset(g, sensor=SensorModel(0.0))
    for r, c in ((0, 1), (1, 0), (1, 2), (2, 1)):
        assert s.belief[r, c] == (OBSTACLE if g.obstacles[r, c] else FREE)
    # diagonals are out of range 1
    assert s.belief[0, 2] == UNKNOWN and s.belief[2, 0] == UNKNOWN


def test_flip_rate_monte_carlo():
    g = load_map("S#\n..")
    sensor = SensorModel(flip_prob=0.1)
    flips = 0
    n = 10_000
    for i in range(n):
        s = reset(g, sensor=sensor, seed=i)
        flips += s.belief[0, 1] == FREE
    assert abs(flips / n - 0.1) <= 0.01


def test_visited_cells_never_flip_to_obstacle():
    g = empty(3)
    s = reset(g, sensor=SensorModel(flip_prob=0.45), seed=1)
    for a in [Cardinal.RIGHT, Cardinal.LEFT] * 200:
        s.step(a)
    assert s.belief[0, 0] == FREE and s.belief[0, 1] == FREE


def test_sense_range_two():
    s = reset(empty(5, start=(2, 2)), sensor=SensorModel(0.0, range=2))
    known = s.belief != UNKNOWN
    expected = np.array([[abs(r - 2) + abs(c - 2) <= 2 for c in range(5)] for r in range(5)])
    assert np.array_equal(known, expected)


# -- metrics ----------------------------------------------------------------


def test_metrics_fresh_and_full():
    s = reset(empty(3))
    assert s.coverage_fraction() == pytest.approx(1 / 9) and s.overlap_fraction() == 0.0
    s = reset(empty(3), cfg=EpisodeConfig(eta=1.0))
    for a in [Cardinal.DOWN, Cardinal.DOWN, Cardinal.RIGHT, Cardinal.UP, Cardinal.UP,
              Cardinal.RIGHT, Cardinal.DOWN, Cardinal.DOWN]:
        s.step(a)
    assert s.coverage_fraction() == 1.0 and s.overlap_fraction() == 0.0


def test_metrics_hand_trace():
    # (0,0)->(0,1)->(0,2)->(0,1)*->(1,1)->(1,0)->(0,0)*: 5 distinct, 2 revisits
    s = reset(empty(3), cfg=EpisodeConfig(eta=1.0))
    for a in [Cardinal.RIGHT, Cardinal.RIGHT, Cardinal.LEFT, Cardinal.DOWN, Cardinal.LEFT, Cardinal.UP]:
        s.step(a)
    assert s.coverage_fraction() == pytest.approx(5 / 9)
    assert s.overlap_fraction() == pytest.approx(2 / 9)


# -- properties -------------------------------------------------------------

maps = st.builds(
    lambda w, h, d, seed, shape: generate_map(MapGenParams(w, h, d, shape, seed=seed)),
    st.integers(2, 8), st.integers(2, 8), st.sampled_from([0.0, 0.1, 0.2, 0.3]),
    st.integers(0, 10_000), st.sampled_from(["cells", "rectangles"]),
)


@settings(max_examples=60, deadline=None)
@given(maps, st.lists(st.integers(0, 3), min_size=1, max_size=80),
       st.sampled_from([0.0, 0.2]), st.sampled_from(["cardinal", "differential"]), st.integers(0, 99))
def test_episode_invariants(grid, actions, rho, mode, seed):
    env = CoverageEnv(grid, EpisodeConfig(eta=1.0, step_cap=10_000, overlap_penalty=0.5),
                      SensorModel(rho), ActionSet(mode))
    s = env.reset(seed)
    n_actions = env.n_actions
    total, prev_cov = 0.0, s.coverage_fraction()
    events = {e: 0 for e in Event}
    trajectory = []
    for a in actions:
        if s.done:
            break
        out = s.step(a % n_actions)
        total += out.reward
        events[out.event] += 1
        trajectory.append((s.position, out.reward))
        assert s.coverage_fraction() >= prev_cov
        prev_cov = s.coverage_fraction()
        assert grid.is_free(*s.position)
        assert np.all(s.belief[s.visit_count > 0] == FREE)
        if rho == 0.0:
            sensed = s.belief != UNKNOWN
            truth = np.where(grid.obstacles, OBSTACLE, FREE)
            assert np.array_equal(s.belief[sensed], truth[sensed])
    assert total == pytest.approx(events[Event.NEW_CELL] - 0.5 * (events[Event.OVERLAP] + events[Event.BUMP]))
    assert events[Event.NEW_CELL] == s.covered - 1 == int((s.visit_count > 0).sum()) - 1
    # determinism: replay the same actions
    s2 = env.reset(seed)
    replay = []
    for a in actions[: len(trajectory)]:
        out = s2.step(a % n_actions)
        replay.append((s2.position, out.reward))
    assert replay == trajectory
    assert np.array_equal(s.belief, s2.belief)


def test_snapshot_is_independent():
    s = reset(empty(3), sensor=SensorModel(0.2), seed=3)
    snap = s.snapshot()
    s.step(Cardinal.RIGHT)
    assert snap.position == (0, 0) and snap.steps == 0
    out_a = snap.step(Cardinal.RIGHT)
    assert out_a.reward == 1.0
    assert np.array_equal(snap.belief, s.belief)
