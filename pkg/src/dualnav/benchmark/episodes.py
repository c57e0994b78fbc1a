"""Procedural worlds, navigation episodes and social (humanoid) placement."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from dualnav.flow.trajectory import arc_lengths, interpolate
from dualnav.planner import (
    astar,
    cost_to_go,
    disc_cells,
    path_to_waypoints,
    traversable_mask,
)
from dualnav.world import HEIGHT_UNIT, AgentState, Humanoid, OccupancyWorld, load_world, save_world

WORLD_SIZE = 20.0
WORLD_RES = 0.1


class PlacementError(RuntimeError):
    """No humanoid placement satisfied the named constraint."""


@dataclass(frozen=True, eq=False)
class Episode:
    id: str
    world: str
    start: AgentState
    goal: tuple
    gt_trajectory: np.ndarray
    humanoids: tuple = ()

    @property
    def shortest_length(self) -> float:
        return float(arc_lengths(np.asarray(self.gt_trajectory))[-1])

    @property
    def is_social(self) -> bool:
        return len(self.humanoids) > 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "world": self.world,
            "start": self.start.to_dict(),
            "goal": [float(self.goal[0]), float(self.goal[1])],
            "gt_trajectory": np.asarray(self.gt_trajectory).tolist(),
            "humanoids": [h.to_dict() for h in self.humanoids],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(d["id"], d["world"], AgentState.from_dict(d["start"]), tuple(d["goal"]),
                   np.asarray(d["gt_trajectory"], dtype=np.float64),
                   tuple(Humanoid.from_dict(h) for h in d.get("humanoids", [])))


def save_episodes(episodes, path, **extra) -> None:
    doc = dict(extra)
    doc["episodes"] = [e.to_dict() for e in episodes]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_episodes(path) -> list:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return [Episode.from_dict(e) for e in doc["episodes"]]


# -- worlds --------------------------------------------------------------------

def generate_world(seed: int, size: float = WORLD_SIZE, resolution: float = WORLD_RES,
                   furniture: int = 20, low_obstacles: float = 0.0) -> OccupancyWorld:
    """Rooms and corridors carved by recursive wall splits, plus furniture.

    Every wall split leaves one or two door gaps, so the room graph is
    connected; furniture may still pinch passages, which episode sampling
    tolerates by drawing goals inside the start's component.
    """
    rng = np.random.default_rng(seed)
    n = int(round(size / resolution))
    h = np.zeros((n, n))
    t = 2  # wall thickness in cells
    h[:t, :] = h[-t:, :] = h[:, :t] = h[:, -t:] = np.inf
    min_room = int(round(3.5 / resolution))

    def split(i0, i1, j0, j1, depth):
        hgt, wid = i1 - i0, j1 - j0
        if depth > 4 or (hgt < 2 * min_room and wid < 2 * min_room):
            return
        if depth > 1 and rng.random() < 0.25:
            return
        horizontal = hgt > wid if abs(hgt - wid) > min_room // 2 else rng.random() < 0.5
        if horizontal and hgt < 2 * min_room:
            horizontal = False
        if not horizontal and wid < 2 * min_room:
            horizontal = True
        if horizontal:
            w = int(rng.integers(i0 + min_room, i1 - min_room + 1))
            h[w:w + t, j0:j1] = np.inf
            _doors(h, rng, (w, w + t), (j0, j1), axis=1, resolution=resolution)
            split(i0, w, j0, j1, depth + 1)
            split(w + t, i1, j0, j1, depth + 1)
        else:
            w = int(rng.integers(j0 + min_room, j1 - min_room + 1))
            h[i0:i1, w:w + t] = np.inf
            _doors(h, rng, (i0, i1), (w, w + t), axis=0, resolution=resolution)
            split(i0, i1, j0, w, depth + 1)
            split(i0, i1, w + t, j1, depth + 1)

    split(t, n - t, t, n - t, 0)
    free = h == 0
    for _ in range(furniture):
        a = int(rng.integers(4, 13))
        b = int(rng.integers(4, 13))
        i = int(rng.integers(t, n - t - a))
        j = int(rng.integers(t, n - t - b))
        # keep a metre of space around door gaps and walls clear of furniture
        if not free[max(0, i - 6):i + a + 6, max(0, j - 6):j + b + 6].all():
            continue
        if rng.random() < low_obstacles:
            height = int(rng.integers(1, 4)) * HEIGHT_UNIT
        else:
            height = int(rng.integers(5, 10)) * HEIGHT_UNIT
        h[i:i + a, j:j + b] = height
    return OccupancyWorld(resolution, h)


def _doors(h, rng, rows, cols, axis, resolution):
    lo, hi = (cols if axis == 1 else rows)
    span = hi - lo
    n_doors = 1 if span < 60 or rng.random() < 0.5 else 2
    width = int(round(rng.uniform(1.0, 1.4) / resolution))
    for k in range(n_doors):
        seg_lo = lo + k * span // n_doors + 3
        seg_hi = lo + (k + 1) * span // n_doors - width - 3
        if seg_hi <= seg_lo:
            seg_lo, seg_hi = lo + 3, max(lo + 4, hi - width - 3)
        s = int(rng.integers(seg_lo, seg_hi))
        if axis == 1:
            h[rows[0]:rows[1], s:s + width] = 0.0
        else:
            h[s:s + width, cols[0]:cols[1]] = 0.0


# -- episodes ------------------------------------------------------------------

def sample_episode(world: OccupancyWorld, rng: np.random.Generator, world_name: str = "",
                   episode_id: str = "", min_dist: float = 3.0, max_dist: float = 8.0,
                   agent_radius: float = 0.2, trav: np.ndarray | None = None,
                   tries: int = 50) -> Episode:
    """Random start/goal pair joined by a smoothed A* path.

    A target geodesic (grid) distance is drawn uniformly from
    ``[min_dist, max_dist]`` and the goal is a cell within 0.25 m of it, so
    long routes are not crowded out by the many short ones.
    """
    trav = traversable_mask(world, agent_radius) if trav is None else trav
    cells = np.argwhere(trav)
    res = world.resolution
    for _ in range(tries):
        s = tuple(int(x) for x in cells[rng.integers(len(cells))])
        dist = cost_to_go(trav, s) * res
        target = rng.uniform(min_dist, max_dist)
        ok = np.argwhere((dist >= max(min_dist, target - 0.25)) & (dist <= min(max_dist, target + 0.25)))
        if len(ok) == 0:
            continue
        g = tuple(int(x) for x in ok[rng.integers(len(ok))])
        path = astar(world, s, g, traversable=trav)
        if path is None:
            continue
        wps = path_to_waypoints(world, path.cells, blocked=~trav)
        start = AgentState(wps[0, 0], wps[0, 1], rng.uniform(-math.pi, math.pi))
        return Episode(episode_id, world_name, start, (float(wps[-1, 0]), float(wps[-1, 1])), wps)
    raise RuntimeError("could not sample an episode in this world")


def generate_episodes(world: OccupancyWorld, n: int, seed, world_name: str = "", prefix: str = "",
                      **kw) -> list:
    ss = np.random.SeedSequence(seed)
    trav = traversable_mask(world, kw.pop("agent_radius", 0.2))
    out = []
    for k, child in enumerate(ss.spawn(n)):
        rng = np.random.default_rng(child)
        out.append(sample_episode(world, rng, world_name, f"{prefix}{k:04d}", trav=trav, **kw))
    return out


# -- social placement ------------------------------------------------------------

def _frozen_at(h: Humanoid, frac: float) -> Humanoid:
    return replace(h, phase=frac * h.path_length, direction=1)


def passable(world: OccupancyWorld, episode: Episode, humanoids, agent_radius: float = 0.2,
             phases=(0.0, 0.25, 0.5, 0.75, 1.0)) -> bool:
    """Static A* from start to goal succeeds with every humanoid frozen at each phase."""
    trav = traversable_mask(world, agent_radius)
    s = world.cell_of(*episode.gt_trajectory[0])
    g = world.cell_of(*episode.gt_trajectory[-1])
    for frac in phases:
        blocked = np.zeros(world.shape, dtype=bool)
        for h in humanoids:
            hf = _frozen_at(h, frac)
            blocked |= disc_cells(world, hf.position, hf.radius + agent_radius)
        t = trav & ~blocked
        if not (t[s] and t[g]):
            return False
        if astar(world, s, g, traversable=t) is None:
            return False
    return True


def _crossing_path(world: OccupancyWorld, center, normal, length, radius) -> tuple | None:
    """Clip a crossing segment through ``center`` to space the humanoid fits in."""
    free = traversable_mask(world, radius)
    res = world.resolution

    def ok(p):
        if not world.in_bounds(*p):
            return False
        return bool(free[world.cell_of(*p)])

    if not ok(center):
        return None
    ends = []
    for sgn in (1.0, -1.0):
        reach = 0.0
        step = res / 2
        while reach + step <= length / 2 and ok(center + sgn * (reach + step) * normal):
            reach += step
        ends.append(center + sgn * reach * normal)
    return (tuple(ends[1]), tuple(ends[0]))


def place_humanoids(episode: Episode, world: OccupancyWorld, k: int, seed, agent_radius: float = 0.2,
                    radius: float = 0.3, speed: float = 0.8, length_range=(2.0, 4.0),
                    retries: int = 20) -> Episode:
    """Put ``k`` humanoids on paths crossing the ground-truth route.

    Anchors are stratified by arc length over the middle of the route; each
    humanoid walks a segment perpendicular to the route there.  A placement is
    kept only if the episode stays passable at every quarter phase.

    Raises:
        PlacementError: naming the violated constraint after ``retries``.
    """
    if k == 0:
        return episode
    rng = np.random.default_rng(seed)
    gt = np.asarray(episode.gt_trajectory)
    cum = arc_lengths(gt)
    total = cum[-1]
    if total < 1.0 * k:
        raise PlacementError("route too short for the requested number of humanoids")
    failure = "passability"
    for _ in range(retries):
        humans = []
        for m in range(k):
            lo = 0.15 + 0.7 * m / k
            hi = 0.15 + 0.7 * (m + 1) / k
            s = rng.uniform(lo, hi) * total
            p, q = interpolate(gt, cum, np.array([s, min(total, s + 0.05)]))
            tangent = q - p
            if np.hypot(*tangent) < 1e-9:
                tangent = gt[-1] - gt[0]
            tangent = tangent / np.hypot(*tangent)
            normal = np.array([-tangent[1], tangent[0]])
            seg = _crossing_path(world, p, normal, rng.uniform(*length_range), radius)
            if seg is None:
                failure = "humanoid anchor not on free space"
                humans = None
                break
            h = Humanoid(m, seg, radius=radius, speed=speed, phase=0.0)
            h = replace(h, phase=rng.uniform(0.0, h.path_length),
                        direction=1 if rng.random() < 0.5 else -1)
            humans.append(h)
        if humans is None:
            continue
        start_xy = gt[0]
        if any(math.hypot(*(hh.position - start_xy)) < hh.radius + agent_radius + 0.5 for hh in humans):
            failure = "humanoid spawned on the start"
            continue
        if passable(world, episode, humans, agent_radius):
            return replace(episode, humanoids=tuple(humans))
        failure = "passability"
    raise PlacementError(f"no placement after {retries} retries: {failure}")


# -- world sets ------------------------------------------------------------------

WORLD_MANIFEST = "worlds.json"


def world_seed(root_seed, index: int) -> int:
    return int(np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, index]).generate_state(1)[0])


def save_world_set(worlds: dict, directory, **extra) -> None:
    """Write ``name.map`` files plus a manifest listing them in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, w in worlds.items():
        save_world(w, directory / f"{name}.map")
        entries.append({"name": name, "file": f"{name}.map", "static_key": w.static_key})
    doc = dict(extra)
    doc["worlds"] = entries
    with open(directory / WORLD_MANIFEST, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_world_set(directory) -> dict:
    directory = Path(directory)
    with open(directory / WORLD_MANIFEST, encoding="utf-8") as f:
        doc = json.load(f)
    return {e["name"]: load_world(directory / e["file"]) for e in doc["worlds"]}
