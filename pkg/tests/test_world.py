import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualnav.benchmark.episodes import generate_world
from dualnav.world import (
    HUMAN_CONTACT_DEPTH,
    Action,
    AgentState,
    CameraIntrinsics,
    CollisionReport,
    Humanoid,
    OccupancyWorld,
    check_collision,
    disc_overlaps_cells,
    dumps_world,
    loads_world,
    move_disc,
    render,
    step_agent,
    step_humanoids,
    sweep_distance,
)

from helpers import empty_world, wall_world
from oracles import disc_overlaps_dense, march_depth, ping_pong, sweep_fine

INTR = CameraIntrinsics()
WORLDS = [generate_world(s) for s in (11, 12)]


def free_pose(world, rng):
    occ = world.occupied
    while True:
        x, y = rng.uniform(0.5, 19.5, 2)
        i, j = world.cell_of(x, y)
        if not occ[max(0, i - 3):i + 4, max(0, j - 3):j + 4].any():
            return x, y


# -- rendering ---------------------------------------------------------------------

def test_wall_two_metres_ahead_gives_axial_depth_two():
    w = wall_world(6.0)
    obs = render(w, AgentState(4.0, 5.05, 0.0), INTR)
    assert obs.depth[32, 32] == pytest.approx(2.0, abs=1e-12)


def test_open_world_horizon_ray_sees_nothing():
    obs = render(empty_world(), AgentState(5.0, 5.0, 0.3), INTR)
    assert math.isinf(obs.depth[32, 32])
    assert not obs.human_mask.any()


def test_humanoid_in_front_of_wall_masks_centre_pixel():
    h = Humanoid(0, ((5.0, 5.0),), radius=0.3)
    w = wall_world(6.0).with_humanoids([h])
    st_ = AgentState(4.0, 5.0, 0.0)
    obs = render(w, st_, INTR)
    expected, human = march_depth(w, st_, INTR, 32, 32)
    assert expected == pytest.approx(0.7, abs=1e-9)
    assert human
    assert obs.depth[32, 32] == pytest.approx(0.7, abs=1e-12)
    assert obs.human_mask[32, 32]


def test_render_rejects_agent_outside_world():
    with pytest.raises(ValueError):
        render(empty_world(), AgentState(-1.0, 5.0))


def test_degenerate_intrinsics_are_rejected():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(cx=64.0)


def test_render_is_bit_deterministic():
    w = WORLDS[0]
    s = AgentState(*free_pose(w, np.random.default_rng(0)), 0.4, -0.2)
    a, b = render(w, s), render(w, s)
    assert a.depth.tobytes() == b.depth.tobytes()
    assert a.human_mask.tobytes() == b.human_mask.tobytes()


@given(st.integers(0, 1), st.integers(0, 10_000), st.floats(-math.pi, math.pi),
       st.sampled_from([0.0, -math.pi / 12, -math.pi / 6]))
def test_depth_matches_ray_marching(widx, seed, yaw, pitch):
    w = WORLDS[widx]
    rng = np.random.default_rng(seed)
    s = AgentState(*free_pose(w, rng), yaw, pitch)
    obs = render(w, s, INTR)
    for u, v in rng.integers(0, 64, size=(6, 2)):
        ref, _ = march_depth(w, s, INTR, u, v)
        got = obs.depth[v, u]
        if math.isinf(ref) or math.isinf(got):
            assert math.isinf(ref) and math.isinf(got)
        else:
            assert abs(got - ref) <= w.resolution / 2


@given(st.integers(0, 10_000))
def test_humanoids_only_shorten_masked_pixels(seed):
    rng = np.random.default_rng(seed)
    w = WORLDS[0]
    x, y = free_pose(w, rng)
    yaw = rng.uniform(-math.pi, math.pi)
    hx, hy = x + 1.5 * math.cos(yaw), y + 1.5 * math.sin(yaw)
    if not (0.5 < hx < 19.5 and 0.5 < hy < 19.5) or w.heights[w.cell_of(hx, hy)] > 0:
        return
    ww = w.with_humanoids([Humanoid(0, ((hx, hy),))])
    s = AgentState(x, y, yaw)
    with_h, without = render(ww, s), render(w, s)
    m = with_h.human_mask
    assert np.array_equal(with_h.depth[~m], without.depth[~m])
    assert np.all(with_h.depth[m] <= without.depth[m])
    assert np.all(with_h.depth[np.isfinite(with_h.depth)] > 0)


# -- kinematics ----------------------------------------------------------------------

def test_forward_moves_quarter_metre_along_yaw():
    s = step_agent(None, AgentState(0.0, 0.0, 0.0), Action.FORWARD)
    assert (s.x, s.y, s.yaw) == (0.25, 0.0, 0.0)


def test_twenty_four_left_turns_close_the_circle():
    s = AgentState(0.0, 0.0, 0.0)
    for _ in range(24):
        s = step_agent(None, s, Action.TURN_LEFT)
    assert abs(math.remainder(s.yaw, 2 * math.pi)) < 1e-12


def test_forward_truncates_at_wall_contact():
    w = wall_world(1.3)
    s = step_agent(w, AgentState(1.0, 5.0, 0.0), Action.FORWARD, agent_radius=0.2)
    ref = 1.0 + sweep_fine(w, (1.0, 5.0), (1.0, 0.0), 0.25, 0.2)
    assert s.x == pytest.approx(1.1, abs=1e-6)
    assert s.x == pytest.approx(ref, abs=1e-4)


def test_stop_and_look_actions():
    s0 = AgentState(1.0, 2.0, 0.5, 0.0)
    assert step_agent(None, s0, Action.STOP) == s0
    s = step_agent(None, s0, Action.LOOK_DOWN)
    assert s.pitch == pytest.approx(-math.pi / 12)
    low = AgentState(0, 0, 0, -math.pi / 2)
    assert step_agent(None, low, Action.LOOK_DOWN).pitch == -math.pi / 2


@given(st.lists(st.sampled_from(list(Action)), max_size=60))
def test_action_sequences_keep_state_normalised(actions):
    s = AgentState(5.0, 5.0, 0.0)
    w = empty_world(border=True)
    for a in actions:
        s = step_agent(w, s, a)
        assert -math.pi < s.yaw <= math.pi
        assert -math.pi / 2 <= s.pitch <= math.pi / 2
        assert not disc_overlaps_cells(w, s.position, 0.2)


@given(st.integers(0, 1), st.integers(0, 10_000), st.floats(0.0, 2 * math.pi))
def test_sweep_matches_fine_stepping(widx, seed, ang):
    w = WORLDS[widx]
    p = free_pose(w, np.random.default_rng(seed))
    d = np.array([math.cos(ang), math.sin(ang)])
    got = sweep_distance(w, p, d, 1.0, 0.2)
    ref = sweep_fine(w, p, d, 1.0, 0.2, step=1e-3)
    assert got == pytest.approx(ref, abs=1.1e-3)


def test_slide_glides_along_a_wall():
    w = wall_world(1.3)
    p = move_disc(w, (1.0, 5.0), np.array([0.3, 0.3]), 0.2, slide=True)
    assert p[0] == pytest.approx(1.1, abs=1e-6)
    assert p[1] > 5.25


def test_humanoids_block_only_when_asked():
    w = empty_world().with_humanoids([Humanoid(0, ((5.0, 5.0),))])
    through = move_disc(w, (4.0, 5.0), np.array([1.0, 0.0]), 0.2)
    assert through[0] == pytest.approx(5.0)
    blocked = move_disc(w, (4.0, 5.0), np.array([1.0, 0.0]), 0.2, humans=True)
    assert blocked[0] == pytest.approx(5.0 - 0.5 + HUMAN_CONTACT_DEPTH, abs=1e-6)
    assert check_collision(w, AgentState(*blocked), 0.2).human_hit


# -- humanoids ---------------------------------------------------------------------

def test_static_humanoid_does_not_move():
    h = Humanoid(0, ((1.0, 1.0), (3.0, 1.0)), speed=0.0, phase=0.5)
    w = empty_world().with_humanoids([h])
    assert step_humanoids(w, 1.0).humanoids == w.humanoids


def test_humanoid_walks_half_metre_in_half_second():
    h = Humanoid(0, ((1.0, 1.0), (3.0, 1.0)), speed=1.0)
    w = step_humanoids(empty_world().with_humanoids([h]), 0.5)
    assert w.humanoids[0].position == pytest.approx([1.5, 1.0])


def test_humanoid_bounces_at_path_end():
    h = Humanoid(0, ((1.0, 1.0), (3.0, 1.0)), speed=1.0)
    s_ref, dir_ref = ping_pong(0.0, 1.0, 3.0, 2.0)
    out = step_humanoids(empty_world().with_humanoids([h]), 3.0).humanoids[0]
    assert (s_ref, dir_ref) == (1.0, -1)
    assert out.phase == pytest.approx(s_ref)
    assert out.direction == dir_ref
    assert out.position == pytest.approx([2.0, 1.0])


@given(st.floats(0.0, 4.0), st.floats(0.01, 2.0), st.floats(0.01, 9.0))
def test_ping_pong_matches_bounce_simulation(phase, speed, dt):
    h = Humanoid(0, ((0.0, 0.0), (4.0, 0.0)), speed=speed, phase=phase)
    s_ref, d_ref = ping_pong(phase, speed, dt, 4.0)
    out = h.advanced(dt)
    assert out.phase == pytest.approx(s_ref, abs=1e-9)
    assert 0.0 <= out.phase <= 4.0


def test_step_humanoids_rejects_non_positive_dt():
    with pytest.raises(ValueError):
        step_humanoids(empty_world(), 0.0)


# -- collisions ------------------------------------------------------------------

def test_empty_world_has_no_collisions():
    assert check_collision(empty_world(), AgentState(5, 5), 0.2) == CollisionReport(False, False)


def test_human_contact_boundary_is_strict():
    w = empty_world().with_humanoids([Humanoid(0, ((5.5, 5.0),), radius=0.3)])
    assert not check_collision(w, AgentState(5.0, 5.0), 0.2).human_hit
    assert check_collision(w, AgentState(5.0 + 1e-9, 5.0), 0.2).human_hit


def test_disc_over_cell_corner_is_a_static_hit():
    h = np.zeros((40, 40))
    h[20, 20] = math.inf  # cell spans [2.0, 2.1] x [2.0, 2.1]
    w = OccupancyWorld(0.1, h)
    xy = (1.9, 1.9)  # corner (2.0, 2.0) is 0.141 m away
    assert disc_overlaps_dense(w, xy, 0.2)
    assert check_collision(w, AgentState(*xy), 0.2).static_hit
    assert not disc_overlaps_dense(w, xy, 0.14)
    assert not check_collision(w, AgentState(*xy), 0.14).static_hit


@given(st.floats(0.5, 3.5), st.floats(0.5, 3.5), st.floats(0.05, 0.4))
def test_overlap_matches_dense_sampling(x, y, r):
    h = np.zeros((40, 40))
    h[18:22, 15:17] = 0.6
    w = OccupancyWorld(0.1, h)
    # skip razor-thin contacts where a finite sample cannot decide
    cx = np.clip(x, 1.5, 1.7)
    cy = np.clip(y, 1.8, 2.2)
    gap = math.hypot(x - cx, y - cy) - r
    if abs(gap) < 2e-3:
        return
    assert disc_overlaps_cells(w, (x, y), r) == disc_overlaps_dense(w, (x, y), r)


# -- map files -----------------------------------------------------------------------

def test_map_file_round_trip_is_exact():
    w = WORLDS[1].with_humanoids([Humanoid(3, ((1.0, 1.0), (1.5, 2.0)), phase=0.2)])
    text = dumps_world(w)
    back = loads_world(text)
    assert dumps_world(back) == text
    assert np.array_equal(back.heights, w.heights)
    assert back.humanoids == w.humanoids


def test_map_file_rejects_unknown_characters():
    with pytest.raises(ValueError):
        loads_world('# dualnav-map v1\n{"resolution": 0.1}\n---\n..x\n')


def test_world_invariants_are_enforced():
    with pytest.raises(ValueError):
        OccupancyWorld(0.0, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        OccupancyWorld(0.1, np.zeros((0, 0)))
    blocked = np.zeros((10, 10))
    blocked[5, 5] = 1.0
    with pytest.raises(ValueError):
        OccupancyWorld(0.1, blocked, (Humanoid(0, ((0.55, 0.55),)),))
