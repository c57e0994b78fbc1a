import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualnav.benchmark.data import (
    SOCIAL_TAG,
    collect_social_data,
    generate_samples,
    read_dataset,
    roundtrip_observation,
    static_samples,
    write_dataset,
)
from dualnav.benchmark.episodes import (
    PlacementError,
    generate_episodes,
    generate_world,
    load_episodes,
    load_world_set,
    passable,
    place_humanoids,
    save_episodes,
    save_world_set,
)
from dualnav.flow.trajectory import anchor_to_world
from dualnav.world import Humanoid, OccupancyWorld

from helpers import corridor_world, empty_world, straight_episode
from oracles import dijkstra_cost, disc_hits_box

WORLDS = {f"g{s}": generate_world(s) for s in (41, 42, 43)}


# -- worlds and episodes ---------------------------------------------------------

def test_world_generation_is_seeded_and_walled():
    a, b = generate_world(5), generate_world(5)
    assert np.array_equal(a.heights, b.heights)
    assert not np.array_equal(a.heights, generate_world(6).heights)
    assert np.all(np.isinf(a.heights[0])) and np.all(np.isinf(a.heights[:, -1]))
    assert a.shape == (200, 200) and a.resolution == 0.1


@pytest.mark.parametrize("seed", range(8))
def test_every_world_admits_a_solvable_episode(seed):
    w = generate_world(100 + seed)
    ep = generate_episodes(w, 1, seed)[0]
    s, g = w.cell_of(*ep.gt_trajectory[0]), w.cell_of(*ep.gt_trajectory[-1])
    assert dijkstra_cost(~w.occupied, s, g) < math.inf


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from(sorted(WORLDS)))
def test_ground_truth_routes_are_clear(seed, name):
    w = WORLDS[name]
    ep = generate_episodes(w, 1, seed, world_name=name, min_dist=3.0, max_dist=10.0)[0]
    gt = ep.gt_trajectory
    assert np.allclose(gt[0], (ep.start.x, ep.start.y)) and np.allclose(gt[-1], ep.goal)
    # distance limits are 4-connected grid steps; the smoothed route can be up to sqrt(2) shorter
    assert 3.0 / math.sqrt(2) - 1e-9 <= ep.shortest_length
    steps = np.hypot(*np.diff(gt, axis=0).T)
    assert np.all(steps <= 0.25 + 1e-9)
    # cell centres keep 0.2 m clearance; off-centre points lose at most half a cell diagonal
    dense = np.concatenate([np.linspace(a, b, 10, endpoint=False) for a, b in zip(gt[:-1], gt[1:])])
    assert not any(disc_hits_box(w, p, 0.2 - w.resolution / math.sqrt(2)) for p in dense)


def test_episode_and_world_files_round_trip(tmp_path):
    eps = generate_episodes(WORLDS["g41"], 3, 1, world_name="g41")
    save_episodes(eps, tmp_path / "e.json", seed=1)
    back = load_episodes(tmp_path / "e.json")
    assert [e.to_dict() for e in back] == [e.to_dict() for e in eps]
    save_world_set(WORLDS, tmp_path / "worlds")
    ws = load_world_set(tmp_path / "worlds")
    assert list(ws) == list(WORLDS)
    assert all(np.array_equal(ws[k].heights, WORLDS[k].heights) for k in WORLDS)


# -- humanoid placement ----------------------------------------------------------

def test_zero_humanoids_leaves_the_episode_alone():
    ep = generate_episodes(WORLDS["g41"], 1, 0)[0]
    assert place_humanoids(ep, WORLDS["g41"], 0, seed=0) is ep


def test_single_humanoid_in_a_wide_corridor():
    w = corridor_world(length=8.0, width=3.0)
    ep = straight_episode(w, (1.5, 2.5), (8.5, 2.5))
    social = place_humanoids(ep, w, 1, seed=3)
    (h,) = social.humanoids
    for p in h.path:
        assert 1.0 + h.radius - 1e-9 <= p[1] <= 4.0 - h.radius + 1e-9 and 1.0 < p[0] < 9.0
    assert passable(w, social, social.humanoids)


def test_three_humanoids_cannot_share_a_one_cell_corridor():
    h = np.full((21, 100), math.inf)
    h[10, 5:95] = 0.0
    w = OccupancyWorld(0.1, h)
    ep = straight_episode(w, (0.55, 1.05), (9.45, 1.05))
    with pytest.raises(PlacementError):
        place_humanoids(ep, w, 3, seed=0)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_placed_humanoids_keep_the_route_open(seed, k):
    name = sorted(WORLDS)[seed % 3]
    w = WORLDS[name]
    ep = generate_episodes(w, 1, seed, min_dist=6.0, max_dist=10.0)[0]
    try:
        social = place_humanoids(ep, w, k, seed)
    except PlacementError:
        return
    assert len(social.humanoids) == k
    assert passable(w, social, social.humanoids)


# -- samples and social data -----------------------------------------------------

def _same(a, b):
    assert [s.kind for s in a] == [s.kind for s in b]
    for x, y in zip(a, b):
        assert x.assistant_text() == y.assistant_text() and x.tags == y.tags
        if x.target_trajectory is not None:
            assert np.array_equal(x.target_trajectory, y.target_trajectory)


def test_invisible_humanoid_changes_nothing():
    w = empty_world(20.0)
    ep = straight_episode(w, (2.0, 2.0), (9.0, 2.0))
    far = Humanoid(0, ((18.0, 18.0), (18.0, 17.0)))
    social = type(ep)(ep.id, ep.world, ep.start, ep.goal, ep.gt_trajectory, (far,))
    got = collect_social_data(w, [social], 0.05, seed=4)
    _same(got, collect_social_data(w, [ep], 0.05, seed=4))
    assert not any(SOCIAL_TAG in s.tags for s in got)


def test_parked_humanoid_gets_a_clear_detour():
    w = empty_world(20.0)
    ep = straight_episode(w, (2.0, 10.0), (14.0, 10.0))
    parked = Humanoid(0, ((7.0, 10.0),))
    social = type(ep)(ep.id, ep.world, ep.start, ep.goal, ep.gt_trajectory, (parked,))
    skipped = []
    got = collect_social_data(w, [social], 0.05, seed=0, skipped=skipped)
    tagged = [s for s in got if SOCIAL_TAG in s.tags and s.kind == "goal"]
    assert skipped == [] and tagged
    clearance = parked.radius + 0.2 + 0.2
    for s in tagged:
        pts = anchor_to_world(s.target_trajectory, s.anchor_observation.agent_state)
        assert np.all(np.hypot(pts[:, 0] - 7.0, pts[:, 1] - 10.0) >= clearance - 1e-9)


def test_unreachable_threshold_never_replans():
    w = empty_world(20.0)
    ep = straight_episode(w, (2.0, 10.0), (14.0, 10.0))
    social = type(ep)(ep.id, ep.world, ep.start, ep.goal, ep.gt_trajectory, (Humanoid(0, ((7.0, 10.0),)),))
    assert not any(SOCIAL_TAG in s.tags for s in collect_social_data(w, [social], 1.0, seed=0))


def test_dataset_round_trip_and_stop_count(tmp_path):
    eps = []
    for name, w in WORLDS.items():
        eps += generate_episodes(w, 3, 7, world_name=name, prefix=name)
    samples = generate_samples(WORLDS, eps, seed=7)
    assert sum(s.kind == "stop" for s in samples) == len(eps)
    write_dataset(samples, tmp_path / "d.jsonl")
    back = read_dataset(tmp_path / "d.jsonl")
    _same(samples, back)
    for a, b in zip(samples, back):
        assert np.array_equal(roundtrip_observation(a.anchor_observation).depth, b.anchor_observation.depth)
        assert np.array_equal(a.anchor_observation.human_mask, b.anchor_observation.human_mask)
        assert a.anchor_observation.agent_state == b.anchor_observation.agent_state


def test_each_episode_draws_from_its_own_child_seed():
    eps = generate_episodes(WORLDS["g42"], 4, 2, world_name="g42")
    children = np.random.SeedSequence(9).spawn(len(eps))
    expected = []
    for ep, child in zip(eps, children):
        expected += static_samples(ep, WORLDS["g42"], np.random.default_rng(child))
    _same(generate_samples(WORLDS, eps, seed=9), expected)
