"""Small hand-built worlds and episodes shared by the unit tests."""

from __future__ import annotations

import math

import numpy as np

from dualnav.benchmark.episodes import Episode
from dualnav.flow.trajectory import resample_polyline
from dualnav.world import AgentState, Humanoid, OccupancyWorld


def empty_world(size=10.0, res=0.1, border=False) -> OccupancyWorld:
    n = int(round(size / res))
    h = np.zeros((n, n))
    if border:
        h[0, :] = h[-1, :] = h[:, 0] = h[:, -1] = math.inf
    return OccupancyWorld(res, h)


def wall_world(wall_x: float, size=10.0, res=0.1, height=math.inf) -> OccupancyWorld:
    """Open floor with a full-width wall whose near face sits at ``wall_x``."""
    n = int(round(size / res))
    h = np.zeros((n, n))
    j = int(round(wall_x / res))
    h[:, j:j + 2] = height
    return OccupancyWorld(res, h)


def corridor_world(length=8.0, width=1.6, res=0.1) -> OccupancyWorld:
    """Straight corridor along +x, centred on y = 1.0 + width / 2."""
    rows = int(round((width + 2.0) / res))
    cols = int(round((length + 2.0) / res))
    h = np.full((rows, cols), math.inf)
    h[10:10 + int(round(width / res)), 10:cols - 10] = 0.0
    return OccupancyWorld(res, h)


def straight_episode(world, start_xy, goal_xy, yaw=None, humanoids=(), eid="ep") -> Episode:
    start_xy, goal_xy = np.asarray(start_xy, float), np.asarray(goal_xy, float)
    d = goal_xy - start_xy
    yaw = math.atan2(d[1], d[0]) if yaw is None else yaw
    gt = resample_polyline(np.array([start_xy, goal_xy]), 0.25)
    return Episode(eid, "w", AgentState(start_xy[0], start_xy[1], yaw), tuple(goal_xy), gt, tuple(humanoids))


def crossing_humanoid(x, y0, y1, hid=0, speed=0.8, phase=0.0) -> Humanoid:
    return Humanoid(hid, ((x, y0), (x, y1)), speed=speed, phase=phase)


def random_view_triple(seed: int, worlds):
    """(world, pose, floor trajectory) with waypoints scattered ahead of the agent.

    Some waypoints fall behind walls or furniture and some outside the image,
    so both sides of the visibility test are exercised.
    """
    rng = np.random.default_rng(seed)
    world = worlds[int(rng.integers(len(worlds)))]
    occ = world.occupied
    size = world.shape[0] * world.resolution
    while True:
        x, y = rng.uniform(0.5, size - 0.5, 2)
        i, j = world.cell_of(x, y)
        if not occ[max(0, i - 3):i + 4, max(0, j - 3):j + 4].any():
            break
    yaw = rng.uniform(-math.pi, math.pi)
    pitch = float(rng.choice([0.0, -math.pi / 12, -math.pi / 6]))
    if rng.random() < 0.3:
        hx, hy = x + 2.0 * math.cos(yaw), y + 2.0 * math.sin(yaw)
        if 0.5 < hx < size - 0.5 and 0.5 < hy < size - 0.5 and world.heights[world.cell_of(hx, hy)] == 0:
            world = world.with_humanoids([Humanoid(0, ((hx, hy),))])
    n = int(rng.integers(8, 25))
    r = rng.uniform(0.6, 9.0, n)
    a = yaw + rng.uniform(-1.0, 1.0, n)
    pts = np.stack([x + r * np.cos(a), y + r * np.sin(a)], 1)
    pts = np.clip(pts, 0.05, size - 0.05)
    return world, AgentState(x, y, yaw, pitch), pts
