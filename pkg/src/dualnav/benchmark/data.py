"""Grounding-sample datasets: generation, social replanning and JSONL storage."""

from __future__ import annotations

import base64
import json
import logging
import math
import zlib
from collections import Counter
from dataclasses import replace

import numpy as np

from dualnav.flow.trajectory import resample_polyline
from dualnav.planner import (
    INFLATION_MARGIN,
    astar,
    disc_cells,
    inflation_mask,
    path_to_waypoints,
    traversable_mask,
)
from dualnav.projection import GroundingSample, PixelGoal, SegmentationError, segment_episode
from dualnav.world import Action, AgentState, CameraIntrinsics, Observation, OccupancyWorld, render

log = logging.getLogger(__name__)

SOCIAL_TAG = "social"


# -- array codec -------------------------------------------------------------------

def encode_array(a: np.ndarray, dtype: str) -> dict:
    a = np.ascontiguousarray(a, dtype=dtype)
    return {"dtype": dtype, "shape": list(a.shape),
            "data": base64.b64encode(zlib.compress(a.tobytes(), 6)).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(d["data"]))
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).copy()


def _obs_to_dict(obs: Observation) -> dict:
    return {"state": obs.agent_state.to_dict(), "t": obs.sim_time,
            "depth": encode_array(obs.depth, "<f4"), "mask": encode_array(obs.human_mask, "|b1")}


def _obs_from_dict(d: dict, intr: CameraIntrinsics) -> Observation:
    return Observation(decode_array(d["depth"]).astype(np.float64), decode_array(d["mask"]).astype(bool),
                       intr, AgentState.from_dict(d["state"]), d["t"])


def sample_to_record(s: GroundingSample) -> dict:
    rec = {"kind": s.kind, "tags": list(s.tags), "goal_index": s.goal_index,
           "text": s.assistant_text(), "anchor": _obs_to_dict(s.anchor_observation),
           "view_actions": [Action(a).name for a in s.view_actions],
           "pixel_goal": None, "target": None, "current": None}
    if s.pixel_goal is not None:
        rec["pixel_goal"] = [s.pixel_goal.u, s.pixel_goal.v]
        rec["target"] = encode_array(s.target_trajectory, "<f8")
    if s.current_observation is not None:
        rec["current"] = _obs_to_dict(s.current_observation)
    return rec


def sample_from_record(rec: dict, intr: CameraIntrinsics) -> GroundingSample:
    anchor = _obs_from_dict(rec["anchor"], intr)
    pg = None
    if rec["pixel_goal"] is not None:
        pg = PixelGoal(rec["pixel_goal"][0], rec["pixel_goal"][1], anchor.agent_state)
    return GroundingSample(
        anchor,
        view_actions=tuple(Action[a] for a in rec["view_actions"]),
        pixel_goal=pg,
        target_trajectory=None if rec["target"] is None else decode_array(rec["target"]),
        is_stop=rec["kind"] == "stop",
        goal_index=rec["goal_index"],
        current_observation=None if rec["current"] is None else _obs_from_dict(rec["current"], intr),
        tags=tuple(rec["tags"]),
    )


def roundtrip_observation(obs: Observation) -> Observation:
    """The observation as it reads back from a dataset file (float32 depth)."""
    return replace(obs, depth=obs.depth.astype(np.float32).astype(np.float64))


def write_dataset(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(sample_to_record(s), sort_keys=True) + "\n")


def read_dataset(path, intr: CameraIntrinsics | None = None) -> list:
    intr = intr or CameraIntrinsics()
    with open(path, encoding="utf-8") as f:
        return [sample_from_record(json.loads(line), intr) for line in f if line.strip()]


def kind_histogram(samples) -> dict:
    c = Counter(s.kind for s in samples)
    return {k: c.get(k, 0) for k in ("goal", "adjust", "stop")}


# -- generation --------------------------------------------------------------------

def static_samples(episode, world: OccupancyWorld, rng: np.random.Generator,
                   intr: CameraIntrinsics | None = None, tags: tuple = ()) -> list:
    """Segment one episode's ground truth in the humanoid-free world."""
    return segment_episode(episode.gt_trajectory, world.with_humanoids([]), intr,
                           start_state=episode.start, rng=rng, tags=tags)


def _frozen(world: OccupancyWorld, humanoids) -> OccupancyWorld:
    return world.with_humanoids(list(humanoids))


def _clears(points: np.ndarray, humanoids, radius_extra: float) -> bool:
    for h in humanoids:
        d = np.hypot(points[:, 0] - h.position[0], points[:, 1] - h.position[1])
        if np.any(d < h.radius + radius_extra):
            return False
    return True


def collect_social_data(world: OccupancyWorld, episodes, mask_threshold: float = 0.05, seed=0,
                        intr: CameraIntrinsics | None = None, agent_radius: float = 0.2,
                        margin: float = INFLATION_MARGIN, speed: float = 1.0, step: float = 0.25,
                        cooldown: float = 1.0, max_replans: int = 5, skipped: list | None = None) -> list:
    """Roll episodes out along their routes and replan around visible humanoids.

    The agent walks its route in ``step`` metre increments at ``speed`` while
    humanoids move.  When the human-mask ratio of its view exceeds
    ``mask_threshold`` (at most ``max_replans`` times, ``cooldown`` metres
    apart) humanoids are frozen, inflated A* replans to the goal, and the
    detour is segmented into samples tagged ``social``.  Each episode also
    contributes its static segmentation, so an episode that never triggers
    yields exactly the static samples.

    Episodes whose replan fails, or whose detour enters an inflation disc,
    are logged and their social samples dropped.
    """
    intr = intr or CameraIntrinsics()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    trav = traversable_mask(world, agent_radius)
    out = []
    for ep, child in zip(episodes, ss.spawn(len(episodes))):
        rng = np.random.default_rng(child)
        out.extend(static_samples(ep, world, rng, intr))
        try:
            out.extend(_social_for_episode(world, ep, trav, rng, intr, mask_threshold, agent_radius,
                                           margin, speed, step, cooldown, max_replans))
        except (_Skip, SegmentationError) as e:
            log.info("episode %s: social samples skipped (%s)", ep.id, e)
            if skipped is not None:
                skipped.append((ep.id, str(e)))
    return out


class _Skip(RuntimeError):
    pass


def _social_for_episode(world, ep, trav, rng, intr, rho, agent_radius, margin, speed, step, cooldown,
                        max_replans):
    if not ep.humanoids:
        return []
    route = resample_polyline(ep.gt_trajectory, step)
    humans = list(ep.humanoids)
    dt = step / speed
    goal_cell = world.cell_of(*route[-1])
    samples = []
    replans, last_replan_s = 0, -math.inf
    i, s = 0, 0.0
    while i < len(route) - 1:
        p = route[i]
        d = route[i + 1] - p
        st = AgentState(p[0], p[1], math.atan2(d[1], d[0]))
        obs = render(_frozen(world, humans), st, intr)
        if obs.human_ratio > rho and replans < max_replans and s - last_replan_s >= cooldown:
            replans += 1
            last_replan_s = s
            infl = inflation_mask(world, agent_radius, margin, humans)
            start = world.cell_of(*p)
            t = trav.copy()
            t[start] = True
            if not t[goal_cell]:
                raise _Skip("goal not traversable")
            path = astar(world, start, goal_cell, infl, traversable=t)
            if path is None:
                raise _Skip("no route at replan")
            hard = ~trav
            for h in humans:
                hard |= disc_cells(world, h.position, h.radius + agent_radius + margin + world.resolution)
            hard[start] = False
            detour = path_to_waypoints(world, path.cells, p, route[-1], hard, step)
            if not _clears(detour[1:], humans, agent_radius + margin):
                raise _Skip("detour enters an inflation disc")
            new = segment_episode(detour, _frozen(world, humans), intr, start_state=st, rng=rng,
                                  tags=(SOCIAL_TAG,))
            samples.extend(new)
            route = np.vstack([route[:i], detour])
        humans = [h.advanced(dt) for h in humans]
        i += 1
        s += step
    return samples


def generate_samples(worlds: dict, episodes, seed, intr: CameraIntrinsics | None = None,
                     social: bool = False, mask_threshold: float = 0.05, errors: list | None = None) -> list:
    """Grounding samples for every episode, in episode order.

    Episode ``i`` draws its randomness from child ``i`` of ``seed``, so an
    episode's samples do not depend on the episodes after it.
    """
    intr = intr or CameraIntrinsics()
    out = []
    children = np.random.SeedSequence(seed).spawn(len(episodes))
    for ep, child in zip(episodes, children):
        world = worlds[ep.world]
        try:
            if social and ep.humanoids:
                out.extend(collect_social_data(world, [ep], mask_threshold, child, intr))
            else:
                out.extend(static_samples(ep, world, np.random.default_rng(child), intr))
        except SegmentationError as e:
            log.warning("episode %s skipped: %s", ep.id, e)
            if errors is not None:
                errors.append((ep.id, str(e)))
    return out
