import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualnav.benchmark.episodes import generate_world
from dualnav.flow.trajectory import anchor_to_world, resample_polyline
from dualnav.projection import (
    GroundingSample,
    PixelGoal,
    bearing_to,
    farthest_pixel_goal,
    project_point,
    segment_episode,
    synthesize_view_adjustment,
    visible_projected_waypoints,
)
from dualnav.world import Action, AgentState, CameraIntrinsics, pixel_rays, render, step_agent

from helpers import corridor_world, empty_world, random_view_triple, wall_world
from oracles import oracle_visible

INTR = CameraIntrinsics()
NARROW = CameraIntrinsics(fx=128.0, fy=128.0)
WORLDS = [generate_world(s) for s in (21, 22, 23)]


# -- projection ------------------------------------------------------------------

def test_floor_point_two_metres_ahead():
    s = AgentState(0.0, 0.0, 0.0)
    u, v, rng = project_point((2.0, 0.0), s, INTR)
    assert u == INTR.cx
    assert v == pytest.approx(INTR.cy + INTR.fy * 1.2 / 2.0)
    assert rng == pytest.approx(math.hypot(2.0, 1.2))


def test_point_behind_agent_does_not_project():
    assert project_point((-2.0, 0.0), AgentState(0.0, 0.0, 0.0), INTR) is None


@given(st.floats(-math.pi, math.pi), st.floats(-0.6, 0.3), st.sampled_from([(0, 0), (63, 0), (0, 63), (63, 63)]),
       st.floats(0.5, 6.0))
def test_corner_rays_round_trip(yaw, pitch, corner, dist):
    s = AgentState(3.0, 4.0, yaw, pitch)
    d = pixel_rays(s, INTR)[corner[1], corner[0]]
    p = np.array([s.x, s.y, s.camera_height]) + dist * d
    u, v, _ = project_point(p, s, INTR)
    assert abs(u - corner[0]) < 0.5 and abs(v - corner[1]) < 0.5


# -- visibility ------------------------------------------------------------------

def test_open_floor_keeps_every_waypoint_in_view():
    w = empty_world(20.0)
    s = AgentState(2.0, 10.0, 0.0)
    traj = np.stack([np.linspace(3.5, 8.0, 12), np.full(12, 10.0)], 1)
    vis = visible_projected_waypoints(traj, render(w, s), 0.05)
    assert [i for i, _, _ in vis] == list(range(12))


def test_waypoint_behind_wall_is_dropped():
    w = wall_world(6.0, size=12.0)
    s = AgentState(4.0, 6.0, 0.0, -math.pi / 6)
    traj = np.array([[9.0, 6.0]])
    obs = render(w, s)
    u, v, _ = project_point(traj[0], s, INTR)
    assert obs.depth[int(v + 0.5), int(u + 0.5)] < 3.0
    assert visible_projected_waypoints(traj, obs, 0.05) == []


def test_waypoint_on_wall_face_survives_with_tolerance():
    w = wall_world(6.0, size=12.0)
    s = AgentState(4.0, 6.0, 0.0)
    p = np.array([[6.0, 6.0]])
    obs = render(w, s)
    u, v, rng = project_point(p[0], s, INTR)
    depth = obs.depth[int(math.floor(v + 0.5)), int(math.floor(u + 0.5))]
    assert abs(rng - depth) < 0.1
    assert len(visible_projected_waypoints(p, obs, 0.1)) == 1


@given(st.integers(0, 100_000))
def test_visibility_matches_brute_force_oracle(seed):
    world, s, pts = random_view_triple(seed, WORLDS)
    tol = world.resolution / 2
    got = [i for i, _, _ in visible_projected_waypoints(pts, render(world, s), tol)]
    assert got == oracle_visible(world, s, INTR, pts, tol)


@given(st.integers(0, 100_000), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_larger_tolerance_never_picks_an_earlier_goal(seed, t1, t2):
    world, s, pts = random_view_triple(seed, WORLDS)
    lo, hi = sorted((t1, t2))
    obs = render(world, s)
    a, b = farthest_pixel_goal(pts, obs, lo), farthest_pixel_goal(pts, obs, hi)
    if a is not None:
        assert b is not None and b[1] >= a[1]


# -- farthest goal ---------------------------------------------------------------

def test_farthest_visible_index_wins():
    s = AgentState(5.0, 5.0, 0.0)
    behind = [3.0, 5.0]
    traj = np.array([behind, behind, [7.0, 5.0], behind, behind, [8.0, 5.5], behind, [9.0, 4.5]])
    obs = render(empty_world(), s)
    assert [i for i, _, _ in visible_projected_waypoints(traj, obs, 0.05)] == [2, 5, 7]
    assert farthest_pixel_goal(traj, obs, 0.05)[1] == 7


def test_nothing_visible_gives_no_goal():
    s = AgentState(5.0, 5.0, 0.0)
    assert farthest_pixel_goal(np.array([[3.0, 5.0], [2.0, 5.0]]), render(empty_world(), s), 0.05) is None


def test_only_the_first_waypoint_visible():
    s = AgentState(5.0, 5.0, 0.0, -math.pi / 2)
    traj = np.array([[5.3, 5.0], [3.0, 5.0]])
    goal, idx = farthest_pixel_goal(traj, render(empty_world(), s), 0.05)
    assert idx == 0
    u, v, _ = project_point(traj[0], s, INTR)
    assert goal.to_text() == f"{math.floor(u + 0.5)} {math.floor(v + 0.5)}"


def test_pixel_goal_text_form():
    s = AgentState(0, 0)
    assert PixelGoal(234, 447, s).to_text() == "234 447"
    assert PixelGoal.from_text("234 447", s) == PixelGoal(234, 447, s)


# -- view adjustment -------------------------------------------------------------

def _adjust(target, s, intr=INTR):
    obs = render(empty_world(20.0), s, intr)
    return synthesize_view_adjustment(np.array([target]), s, obs)


def test_waypoint_sixty_degrees_left_turns_left_four_times():
    s = AgentState(10.0, 10.0, 0.0)
    t = (10.0 + 3 * math.cos(math.radians(60)), 10.0 + 3 * math.sin(math.radians(60)))
    assert _adjust(t, s) == [Action.TURN_LEFT] * 4


def test_waypoint_twenty_degrees_right_turns_right_twice():
    s = AgentState(10.0, 10.0, 0.0)
    t = (10.0 + 3 * math.cos(math.radians(-20)), 10.0 + 3 * math.sin(math.radians(-20)))
    assert _adjust(t, s, NARROW) == [Action.TURN_RIGHT] * 2


def test_waypoint_below_the_image_looks_down():
    s = AgentState(10.0, 10.0, 0.0)
    assert _adjust((10.5, 10.0), s) == [Action.LOOK_DOWN]


def test_behind_tie_breaks_left():
    s = AgentState(10.0, 10.0, 0.0)
    assert bearing_to((8.0, 10.0), s) == math.pi
    assert _adjust((8.0, 10.0), s) == [Action.TURN_LEFT] * 4


def test_adjustment_refuses_when_goal_exists():
    s = AgentState(10.0, 10.0, 0.0)
    with pytest.raises(ValueError):
        _adjust((13.0, 10.0), s)


@given(st.floats(-math.pi, math.pi), st.floats(0.5, 6.0))
def test_adjustment_chunks_reduce_bearing_until_grounded(b, r):
    w = empty_world(20.0)
    s = AgentState(10.0, 10.0, 0.0)
    target = np.array([[10.0 + r * math.cos(b), 10.0 + r * math.sin(b)]])
    for _ in range(12):
        obs = render(w, s)
        if farthest_pixel_goal(target, obs, 0.05) is not None:
            return
        before = abs(bearing_to(target[0], s))
        acts = synthesize_view_adjustment(target, s, obs)
        assert 1 <= len(acts) <= 4
        for a in acts:
            s = step_agent(None, s, a)
        if acts[0].is_turn:
            assert abs(bearing_to(target[0], s)) < before
    pytest.fail("view adjustment never produced a pixel goal")


# -- segmentation ----------------------------------------------------------------

def test_straight_corridor_gives_one_goal_then_stop():
    w = corridor_world()
    traj = resample_polyline(np.array([[1.5, 1.8], [5.5, 1.8]]), 0.25)
    start = AgentState(1.5, 1.8, 0.0)
    assert oracle_visible(w, start, INTR, traj, 0.05)[-1] == len(traj) - 1
    samples = segment_episode(traj, w, start_state=start)
    assert [s.kind for s in samples] == ["goal", "stop"]
    assert samples[0].goal_index == len(traj) - 1


def test_turn_in_place_start_begins_with_adjustment():
    w = corridor_world()
    traj = resample_polyline(np.array([[5.0, 1.8], [2.0, 1.8]]), 0.25)
    samples = segment_episode(traj, w, start_state=AgentState(5.0, 1.8, 0.0))
    assert samples[0].kind == "adjust"
    assert samples[-1].kind == "stop"


def test_empty_trajectory_is_an_error():
    with pytest.raises(ValueError):
        segment_episode(np.zeros((0, 2)), empty_world())


def test_sample_kinds_are_exclusive():
    obs = render(empty_world(), AgentState(5, 5))
    with pytest.raises(ValueError):
        GroundingSample(obs, view_actions=(Action.TURN_LEFT,), is_stop=True)
    with pytest.raises(ValueError):
        GroundingSample(obs)


@given(st.integers(0, 10_000))
def test_segments_rebuild_the_trajectory(seed):
    from dualnav.benchmark.episodes import generate_episodes

    w = WORLDS[seed % 3]
    ep = generate_episodes(w, 1, seed)[0]
    samples = segment_episode(ep.gt_trajectory, w, start_state=ep.start)
    assert samples[-1].kind == "stop"
    assert sum(s.kind == "stop" for s in samples) == 1
    pieces = [anchor_to_world(s.target_trajectory, s.anchor_observation.agent_state)
              for s in samples if s.kind == "goal"]
    rebuilt = np.vstack([ep.gt_trajectory[:1]] + pieces)
    # every ground-truth waypoint lies on the rebuilt polyline
    for p in ep.gt_trajectory:
        d = np.hypot(*(rebuilt - p).T).min()
        seg = _dist_to_polyline(rebuilt, p)
        assert min(d, seg) < 0.05
    assert np.allclose(rebuilt[-1], ep.gt_trajectory[-1])


def _dist_to_polyline(poly, p):
    a, b = poly[:-1], poly[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-18), 0, 1)
    return float(np.min(np.hypot(*(a + t[:, None] * ab - p).T)))
