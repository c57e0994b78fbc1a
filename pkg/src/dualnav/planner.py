"""Privileged global planner standing in for the slow vision-language model.

The planner sees the map and the episode goal.  It plans on the grid, then
hands back exactly what the slow system would say: a few discrete view
adjustments, a pixel goal in the current image, or STOP.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from dualnav import _grid
from dualnav.flow.trajectory import resample_polyline
from dualnav.projection import (
    GLYPHS,
    PixelGoal,
    farthest_pixel_goal,
    synthesize_view_adjustment,
)
from dualnav.world import AgentState, Observation, OccupancyWorld

NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))
WAYPOINT_SPACING = 0.25
INFLATION_PENALTY = 50.0
INFLATION_MARGIN = 0.2


class NoRouteError(RuntimeError):
    """The goal is unreachable from the agent's position."""


@dataclass(frozen=True)
class GridPath:
    cells: tuple
    length: float
    cost: float = 0.0

    def points(self, world: OccupancyWorld) -> np.ndarray:
        return np.array([world.cell_center(c) for c in self.cells])


@dataclass(frozen=True, eq=False)
class PlannerOutput:
    kind: str  # "adjust" | "goal" | "stop"
    sim_time_issued: float = 0.0
    actions: tuple = ()
    pixel_goal: PixelGoal | None = None
    anchor_observation: Observation | None = None
    goal_index: int = -1
    waypoints: np.ndarray | None = field(default=None, repr=False)

    def to_text(self) -> str:
        if self.kind == "stop":
            return "STOP"
        if self.kind == "adjust":
            return " ".join(GLYPHS[a] for a in self.actions)
        return self.pixel_goal.to_text()


def _clearance_kernel(radius: float, res: float) -> np.ndarray:
    n = int(math.ceil(radius / res + 0.5))
    k = np.zeros((2 * n + 1, 2 * n + 1), dtype=bool)
    for di in range(-n, n + 1):
        for dj in range(-n, n + 1):
            gx = max(abs(dj) - 0.5, 0.0) * res
            gy = max(abs(di) - 0.5, 0.0) * res
            k[di + n, dj + n] = math.hypot(gx, gy) < radius
    return k


def traversable_mask(world: OccupancyWorld, clearance: float = 0.0) -> np.ndarray:
    """Free cells whose centre keeps a disc of ``clearance`` off every obstacle."""
    occ = world.occupied
    if clearance <= 0:
        return ~occ
    k = _clearance_kernel(clearance, world.resolution)
    blocked = ndimage.binary_dilation(occ, structure=k, border_value=1)
    return ~blocked


def disc_cells(world: OccupancyWorld, center, radius: float) -> np.ndarray:
    """Boolean mask of cells whose centre lies within ``radius`` of ``center``."""
    rows, cols = world.shape
    res = world.resolution
    ys = (np.arange(rows) + 0.5) * res
    xs = (np.arange(cols) + 0.5) * res
    return (xs[None, :] - center[0]) ** 2 + (ys[:, None] - center[1]) ** 2 <= radius ** 2


def inflation_mask(world: OccupancyWorld, agent_radius: float, margin: float = INFLATION_MARGIN,
                   humanoids=None) -> np.ndarray:
    humanoids = world.humanoids if humanoids is None else humanoids
    mask = np.zeros(world.shape, dtype=bool)
    for h in humanoids:
        mask |= disc_cells(world, h.position, h.radius + agent_radius + margin)
    return mask


def astar(world: OccupancyWorld, start, goal, inflation=None, *, penalty: float = INFLATION_PENALTY,
          traversable: np.ndarray | None = None) -> GridPath | None:
    """4-connected A* with unit steps and a soft penalty on inflated cells.

    Args:
        start, goal: (row, col) cells; both must be traversable.
        inflation: boolean mask (or iterable of cells) charged ``penalty``
            extra per entered cell.
        traversable: mask of cells the search may enter; defaults to all
            free cells.

    Returns:
        The cheapest path, or ``None`` when the goal is unreachable.  Equal
        f-scores pop the lexicographically smaller (row, col) first.
    """
    trav = ~world.occupied if traversable is None else traversable
    rows, cols = trav.shape
    start, goal = tuple(start), tuple(goal)
    for c in (start, goal):
        if not (0 <= c[0] < rows and 0 <= c[1] < cols) or not trav[c]:
            raise ValueError(f"cell {c} is not traversable")
    pen = np.zeros(trav.shape)
    if inflation is not None:
        if isinstance(inflation, np.ndarray):
            pen[inflation] = penalty
        else:
            for c in inflation:
                pen[tuple(c)] = penalty
    gi, gj = goal
    g = {start: 0.0}
    parent = {start: None}
    heap = [(abs(start[0] - gi) + abs(start[1] - gj), start[0], start[1])]
    closed = set()
    while heap:
        f, i, j = heapq.heappop(heap)
        cur = (i, j)
        if cur in closed:
            continue
        if cur == goal:
            cells = []
            while cur is not None:
                cells.append(cur)
                cur = parent[cur]
            cells.reverse()
            return GridPath(tuple(cells), (len(cells) - 1) * world.resolution, g[goal])
        closed.add(cur)
        gc = g[cur]
        for di, dj in NEIGHBORS:
            ni, nj = i + di, j + dj
            if not (0 <= ni < rows and 0 <= nj < cols) or not trav[ni, nj]:
                continue
            nxt = (ni, nj)
            if nxt in closed:
                continue
            ng = gc + 1.0 + pen[ni, nj]
            if ng < g.get(nxt, math.inf):
                g[nxt] = ng
                parent[nxt] = cur
                heapq.heappush(heap, (ng + abs(ni - gi) + abs(nj - gj), ni, nj))
    return None


def cost_to_go(traversable: np.ndarray, goal) -> np.ndarray:
    """Breadth-first step counts to ``goal`` (inf where unreachable)."""
    trav = np.ascontiguousarray(traversable, dtype=np.bool_)
    return _grid.bfs(trav, int(goal[0]), int(goal[1]))


def descend(dist: np.ndarray, start) -> list:
    """Shortest path down a cost-to-go field; ties go to the smaller (row, col)."""
    rows, cols = dist.shape
    cur = tuple(start)
    cells = [cur]
    while dist[cur] > 0:
        best = None
        for di, dj in sorted(NEIGHBORS):
            ni, nj = cur[0] + di, cur[1] + dj
            if 0 <= ni < rows and 0 <= nj < cols and dist[ni, nj] == dist[cur] - 1:
                best = (ni, nj)
                break
        cur = best
        cells.append(cur)
    return cells


def segment_clear(blocked: np.ndarray, res: float, a, b, allow=None) -> bool:
    """True if the straight segment a->b crosses no blocked cell."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = max(2, int(math.ceil(np.hypot(*(b - a)) / (res / 4))) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    p = a + t * (b - a)
    i = np.floor(p[:, 1] / res).astype(int)
    j = np.floor(p[:, 0] / res).astype(int)
    rows, cols = blocked.shape
    if np.any((i < 0) | (j < 0) | (i >= rows) | (j >= cols)):
        return False
    hit = blocked[i, j]
    if allow is not None:
        hit &= ~((i == allow[0]) & (j == allow[1]))
    return not bool(hit.any())


def shortcut(points: np.ndarray, blocked: np.ndarray, res: float, allow=None) -> np.ndarray:
    """Greedy line-of-sight simplification of a polyline."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) <= 2:
        return points
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = i + 1
        while j + 1 < len(points) and segment_clear(blocked, res, points[i], points[j + 1],
                                                    allow if i == 0 else None):
            j += 1
        out.append(points[j])
        i = j
    return np.array(out)


def path_to_waypoints(world: OccupancyWorld, cells, start_xy=None, goal_xy=None,
                      blocked: np.ndarray | None = None, spacing: float = WAYPOINT_SPACING) -> np.ndarray:
    """Grid cells -> smoothed floor waypoints every ``spacing`` metres."""
    pts = [world.cell_center(c) for c in cells]
    if start_xy is not None:
        pts[0] = np.asarray(start_xy, dtype=np.float64)
    if goal_xy is not None:
        g = np.asarray(goal_xy, dtype=np.float64)
        if np.hypot(*(g - pts[-1])) > 1e-9:
            pts.append(g)
    pts = np.array(pts)
    if blocked is not None:
        start_cell = world.cell_of(*pts[0])
        pts = shortcut(pts, blocked, world.resolution, allow=start_cell)
    return resample_polyline(pts, spacing)


class OraclePlanner:
    """Slow-tick planner with privileged access to the static map.

    Keeps a cost-to-go field per (layout, goal) so each tick only walks
    downhill from the agent cell.  One instance serves one episode at a time.
    """

    def __init__(self, stop_radius: float = 0.5, agent_radius: float = 0.2, tol: float | None = None,
                 spacing: float = WAYPOINT_SPACING):
        self.stop_radius = stop_radius
        self.agent_radius = agent_radius
        self.tol = tol
        self.spacing = spacing
        self._cache_key = None
        self._cache = None

    def _field(self, world: OccupancyWorld, goal_cell):
        key = (world.static_key, goal_cell)
        if self._cache_key != key:
            trav = traversable_mask(world, self.agent_radius)
            if not trav[goal_cell]:
                trav = trav.copy()
                trav[goal_cell] = True
            self._cache = (trav, cost_to_go(trav, goal_cell))
            self._cache_key = key
        return self._cache

    def plan_path(self, world: OccupancyWorld, state: AgentState, goal) -> np.ndarray:
        """Smoothed waypoints from the agent to the goal (index 0 is the agent)."""
        goal = np.asarray(goal, dtype=np.float64)
        goal_cell = world.cell_of(*goal)
        trav, dist = self._field(world, goal_cell)
        start = world.cell_of(state.x, state.y)
        if not np.isfinite(dist[start]):
            start = self._nearest_reachable(world, dist, state)
        cells = descend(dist, start)
        return path_to_waypoints(world, cells, (state.x, state.y), goal, ~trav, self.spacing)

    @staticmethod
    def _nearest_reachable(world, dist, state, reach: int = 6):
        ci, cj = world.cell_of(state.x, state.y)
        best, best_d = None, math.inf
        rows, cols = dist.shape
        for i in range(max(0, ci - reach), min(rows, ci + reach + 1)):
            for j in range(max(0, cj - reach), min(cols, cj + reach + 1)):
                if np.isfinite(dist[i, j]):
                    c = world.cell_center((i, j))
                    d = math.hypot(c[0] - state.x, c[1] - state.y)
                    if d < best_d:
                        best, best_d = (i, j), d
        if best is None:
            raise NoRouteError("goal unreachable from the agent position")
        return best

    def plan_step(self, world: OccupancyWorld, state: AgentState, goal, obs: Observation,
                  sim_time: float = 0.0) -> PlannerOutput:
        if math.hypot(goal[0] - state.x, goal[1] - state.y) < self.stop_radius:
            return PlannerOutput("stop", sim_time)
        tol = world.resolution / 2 if self.tol is None else self.tol
        wps = self.plan_path(world, state, goal)
        found = farthest_pixel_goal(wps, obs, tol, min_index=1)
        if found is not None:
            pg, idx = found
            return PlannerOutput("goal", sim_time, pixel_goal=pg, anchor_observation=obs,
                                 goal_index=idx, waypoints=wps)
        actions = synthesize_view_adjustment(wps, state, obs, tol, start=1)
        return PlannerOutput("adjust", sim_time, actions=tuple(actions), anchor_observation=obs,
                             waypoints=wps)
