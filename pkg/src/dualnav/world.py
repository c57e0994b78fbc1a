"""2.5D occupancy-grid world, pinhole depth rendering and agent kinematics.

Coordinates: x grows with grid column, y with grid row, yaw is measured
counter-clockwise from +x.  Obstacle cells carry a height in metres; ``inf``
marks a full-height wall.  Images are stored row-major as ``[v, u]``.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dualnav import _raycast

STEP_FORWARD = 0.25
STEP_ANGLE = math.pi / 12
HEIGHT_UNIT = 0.3
DEFAULT_CAMERA_HEIGHT = 1.2
CONTACT_SLACK = 1e-9
HUMAN_CONTACT_DEPTH = 0.01


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


class Action(enum.IntEnum):
    STOP = 0
    FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3
    LOOK_UP = 4
    LOOK_DOWN = 5

    @property
    def is_turn(self) -> bool:
        return self in (Action.TURN_LEFT, Action.TURN_RIGHT)

    @property
    def is_look(self) -> bool:
        return self in (Action.LOOK_UP, Action.LOOK_DOWN)


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    yaw: float = 0.0
    pitch: float = 0.0
    camera_height: float = DEFAULT_CAMERA_HEIGHT

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "pitch", min(max(float(self.pitch), -math.pi / 2), math.pi / 2))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def replace(self, **kw) -> "AgentState":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(**d)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 32.0
    fy: float = 32.0
    cx: float = 32.0
    cy: float = 32.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**d)


@dataclass(frozen=True)
class Humanoid:
    """Scripted pedestrian walking back and forth along a polyline."""

    id: int
    path: tuple
    radius: float = 0.3
    height: float = 1.7
    speed: float = 0.8
    phase: float = 0.0
    direction: int = 1

    def __post_init__(self):
        path = tuple((float(p[0]), float(p[1])) for p in self.path)
        if len(path) < 1:
            raise ValueError("humanoid path needs at least one waypoint")
        if self.radius <= 0:
            raise ValueError("humanoid radius must be positive")
        if self.speed < 0:
            raise ValueError("humanoid speed must be non-negative")
        object.__setattr__(self, "path", path)
        if not (0.0 <= self.phase <= self.path_length + 1e-9):
            raise ValueError("phase outside the path")

    @property
    def path_length(self) -> float:
        p = np.asarray(self.path)
        if len(p) < 2:
            return 0.0
        return float(np.sum(np.hypot(*np.diff(p, axis=0).T)))

    def point_at(self, s: float) -> np.ndarray:
        p = np.asarray(self.path)
        if len(p) == 1:
            return p[0].copy()
        seg = np.hypot(*np.diff(p, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        s = min(max(s, 0.0), cum[-1])
        k = int(np.searchsorted(cum, s, side="right") - 1)
        k = min(k, len(seg) - 1)
        if seg[k] == 0:
            return p[k].copy()
        a = (s - cum[k]) / seg[k]
        return p[k] + a * (p[k + 1] - p[k])

    @property
    def position(self) -> np.ndarray:
        return self.point_at(self.phase)

    def advanced(self, dt: float) -> "Humanoid":
        length = self.path_length
        if self.speed == 0 or length == 0:
            return self
        # unfold the ping-pong onto a loop of length 2L
        s = self.phase if self.direction > 0 else 2 * length - self.phase
        s = math.fmod(s + self.speed * dt, 2 * length)
        if s <= length:
            return dataclasses.replace(self, phase=s, direction=1)
        return dataclasses.replace(self, phase=2 * length - s, direction=-1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["path"] = [list(p) for p in self.path]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Humanoid":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class OccupancyWorld:
    """Static height grid plus the pedestrians currently in it."""

    resolution: float
    heights: np.ndarray
    humanoids: tuple = ()
    _key: str = field(default="", repr=False)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.size == 0:
            raise ValueError("grid must be a non-empty 2D array")
        if np.any(h < 0) or np.any(np.isnan(h)):
            raise ValueError("obstacle heights must be positive")
        h = np.ascontiguousarray(h)
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "humanoids", tuple(self.humanoids))
        if not self._key:
            digest = hashlib.sha1(h.tobytes() + repr(self.resolution).encode()).hexdigest()
            object.__setattr__(self, "_key", digest)
        for hu in self.humanoids:
            x, y = hu.position
            if not self.in_bounds(x, y):
                raise ValueError(f"humanoid {hu.id} outside the world")
            if h[self.cell_of(x, y)] > 0:
                raise ValueError(f"humanoid {hu.id} stands on an obstacle")

    @property
    def static_key(self) -> str:
        """Hash of the static layout; stable across humanoid updates."""
        return self._key

    @property
    def shape(self) -> tuple:
        return self.heights.shape

    @property
    def extent(self) -> tuple:
        rows, cols = self.heights.shape
        return cols * self.resolution, rows * self.resolution

    @property
    def occupied(self) -> np.ndarray:
        return self.heights > 0

    def in_bounds(self, x: float, y: float) -> bool:
        w, h = self.extent
        return 0.0 <= x < w and 0.0 <= y < h

    def cell_of(self, x: float, y: float) -> tuple:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def cell_center(self, cell) -> np.ndarray:
        i, j = cell
        return np.array([(j + 0.5) * self.resolution, (i + 0.5) * self.resolution])

    def with_humanoids(self, humanoids: Sequence[Humanoid]) -> "OccupancyWorld":
        return OccupancyWorld(self.resolution, self.heights, tuple(humanoids), self._key)

    def humanoid_array(self) -> np.ndarray:
        out = np.zeros((len(self.humanoids), 4))
        for k, hu in enumerate(self.humanoids):
            out[k, :2] = hu.position
            out[k, 2] = hu.radius
            out[k, 3] = hu.height
        return out


@dataclass(frozen=True, eq=False)
class Observation:
    depth: np.ndarray
    human_mask: np.ndarray
    intrinsics: CameraIntrinsics
    agent_state: AgentState
    sim_time: float = 0.0

    @property
    def human_ratio(self) -> float:
        return float(self.human_mask.mean())


@dataclass(frozen=True)
class CollisionReport:
    static_hit: bool
    human_hit: bool


def pixel_rays(state: AgentState, intr: CameraIntrinsics) -> np.ndarray:
    """Unit world-frame ray directions, shape (height, width, 3)."""
    u = np.arange(intr.width, dtype=np.float64)
    v = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    left = -(uu - intr.cx) / intr.fx
    up = -(vv - intr.cy) / intr.fy
    return camera_to_world(np.ones_like(uu), left, up, state)


def camera_to_world(fwd, left, up, state: AgentState) -> np.ndarray:
    cp, sp = math.cos(state.pitch), math.sin(state.pitch)
    cy_, sy_ = math.cos(state.yaw), math.sin(state.yaw)
    bf = fwd * cp - up * sp
    bu = fwd * sp + up * cp
    wx = bf * cy_ - left * sy_
    wy = bf * sy_ + left * cy_
    d = np.stack([wx, wy, bu], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def render(world: OccupancyWorld, state: AgentState, intr: CameraIntrinsics | None = None,
           sim_time: float = 0.0) -> Observation:
    """Ray-cast depth and human mask for one egocentric view."""
    intr = intr or CameraIntrinsics()
    if not world.in_bounds(state.x, state.y):
        raise ValueError("agent outside the world")
    dirs = pixel_rays(state, intr).reshape(-1, 3)
    depth = np.empty(len(dirs))
    mask = np.empty(len(dirs), dtype=np.bool_)
    _raycast.cast_rays(world.heights, float(world.resolution), state.x, state.y,
                       state.camera_height, dirs, world.humanoid_array(), depth, mask)
    shape = (intr.height, intr.width)
    return Observation(depth.reshape(shape), mask.reshape(shape), intr, state, float(sim_time))


def sweep_distance(world: OccupancyWorld, start, direction, length: float, radius: float) -> float:
    """How far a disc can travel along a unit direction before static contact."""
    if length <= 0:
        return 0.0
    free = _raycast.disc_sweep(world.occupied, float(world.resolution), float(start[0]),
                               float(start[1]), float(direction[0]), float(direction[1]),
                               float(length), float(radius))
    if free < length:
        free = max(0.0, free - CONTACT_SLACK)
    return free


def contact_normal(world: OccupancyWorld, xy, radius: float):
    """Unit vector from the nearest blocked point to the disc centre, or None."""
    res = world.resolution
    x, y = float(xy[0]), float(xy[1])
    reach = radius + 2 * res
    rows, cols = world.shape
    occ = world.occupied
    best, best_d = None, math.inf
    for i in range(int(math.floor((y - reach) / res)), int(math.floor((y + reach) / res)) + 1):
        for j in range(int(math.floor((x - reach) / res)), int(math.floor((x + reach) / res)) + 1):
            if 0 <= i < rows and 0 <= j < cols and not occ[i, j]:
                continue
            qx = min(max(x, j * res), (j + 1) * res)
            qy = min(max(y, i * res), (i + 1) * res)
            d = math.hypot(x - qx, y - qy)
            if d < best_d:
                best, best_d = (x - qx, y - qy), d
    if best is None or best_d > reach or best_d < 1e-12:
        return None
    return np.array(best) / best_d


def _human_sweep(humans: np.ndarray, p: np.ndarray, d: np.ndarray, length: float, radius: float):
    """Free travel before pressing into a humanoid, and the contact normal (or None).

    Bodies give by ``HUMAN_CONTACT_DEPTH`` before they block, so an agent
    pushed against a humanoid overlaps it and the contact is a collision.
    Discs the agent already overlaps that far only block motion going deeper.
    """
    best, normal = length, None
    for hx, hy, hr, _ in humans:
        rel = p - (hx, hy)
        big = radius + hr - HUMAN_CONTACT_DEPTH
        b = float(rel @ d)
        c = float(rel @ rel) - big * big
        if c <= 0:
            if b < 0:
                best, normal = 0.0, rel / max(math.sqrt(float(rel @ rel)), 1e-12)
            continue
        disc = b * b - c
        if b >= 0 or disc <= 0:
            continue
        t = -b - math.sqrt(disc)
        if t < best:
            best = max(0.0, t - CONTACT_SLACK)
            q = rel + t * d
            normal = q / big
    return best, normal


def move_disc(world: OccupancyWorld, start, delta, radius: float, slide: bool = False,
              humans: bool = False) -> np.ndarray:
    """Translate a disc by ``delta``, truncating at static contact.

    With ``slide`` the motion left after contact is projected onto the
    contact tangent and retried, which lets an agent glide along walls and
    round corners.  With ``humans`` the humanoid discs are solid too.
    """
    p = np.asarray(start, dtype=np.float64).copy()
    rest = np.asarray(delta, dtype=np.float64)
    hum = world.humanoid_array() if humans and world.humanoids else None
    for _ in range(3 if slide else 1):
        n = float(np.hypot(*rest))
        if n < 1e-12:
            break
        d = rest / n
        t = sweep_distance(world, p, d, n, radius)
        normal = None
        if hum is not None:
            th, hn = _human_sweep(hum, p, d, t, radius)
            if th < t:
                t, normal = th, hn
        p = p + t * d
        if t >= n:
            break
        rest = (n - t) * d
        if normal is None:
            normal = contact_normal(world, p, radius)
        if normal is None:
            break
        into = float(rest @ normal)
        if into >= 0:
            break
        rest = rest - into * normal
    return p


def step_agent(world: OccupancyWorld | None, state: AgentState, action: Action,
               agent_radius: float = 0.2) -> AgentState:
    """Apply one discrete action.  Forward motion stops at contact."""
    action = Action(action)
    if action == Action.STOP:
        return state
    if action == Action.TURN_LEFT:
        return state.replace(yaw=state.yaw + STEP_ANGLE)
    if action == Action.TURN_RIGHT:
        return state.replace(yaw=state.yaw - STEP_ANGLE)
    if action == Action.LOOK_UP:
        return state.replace(pitch=state.pitch + STEP_ANGLE)
    if action == Action.LOOK_DOWN:
        return state.replace(pitch=state.pitch - STEP_ANGLE)
    delta = STEP_FORWARD * np.array([math.cos(state.yaw), math.sin(state.yaw)])
    if world is None:
        p = state.position + delta
    else:
        p = move_disc(world, state.position, delta, agent_radius)
    return state.replace(x=p[0], y=p[1])


def step_humanoids(world: OccupancyWorld, dt: float) -> OccupancyWorld:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not world.humanoids:
        return world
    return world.with_humanoids([h.advanced(dt) for h in world.humanoids])


def disc_overlaps_cells(world: OccupancyWorld, xy, radius: float) -> bool:
    """True iff the open disc intersects an obstacle cell or leaves the grid."""
    res = world.resolution
    x, y = float(xy[0]), float(xy[1])
    rows, cols = world.shape
    i0, i1 = int(math.floor((y - radius) / res)), int(math.floor((y + radius) / res))
    j0, j1 = int(math.floor((x - radius) / res)), int(math.floor((x + radius) / res))
    occ = world.occupied
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            inside = 0 <= i < rows and 0 <= j < cols
            if inside and not occ[i, j]:
                continue
            qx = min(max(x, j * res), (j + 1) * res)
            qy = min(max(y, i * res), (i + 1) * res)
            if math.hypot(x - qx, y - qy) < radius:
                return True
    return False


def check_collision(world: OccupancyWorld, state: AgentState, agent_radius: float) -> CollisionReport:
    static_hit = disc_overlaps_cells(world, (state.x, state.y), agent_radius)
    human_hit = False
    for hu in world.humanoids:
        px, py = hu.position
        if math.hypot(px - state.x, py - state.y) < agent_radius + hu.radius:
            human_hit = True
            break
    return CollisionReport(static_hit, human_hit)


# -- map files ---------------------------------------------------------------

MAP_MAGIC = "# dualnav-map v1"


def _height_char(h: float) -> str:
    if h == 0:
        return "."
    if math.isinf(h):
        return "#"
    d = int(round(h / HEIGHT_UNIT))
    if not 1 <= d <= 9 or d * HEIGHT_UNIT != h:
        raise ValueError(f"height {h} is not representable in a map file")
    return str(d)


def dumps_world(world: OccupancyWorld) -> str:
    header = {
        "resolution": world.resolution,
        "humanoids": [h.to_dict() for h in world.humanoids],
    }
    lines = [MAP_MAGIC, json.dumps(header, sort_keys=True), "---"]
    for row in world.heights:
        lines.append("".join(_height_char(h) for h in row))
    return "\n".join(lines) + "\n"


def loads_world(text: str) -> OccupancyWorld:
    lines = text.splitlines()
    if not lines or lines[0] != MAP_MAGIC:
        raise ValueError("not a dualnav map file")
    try:
        sep = lines.index("---")
    except ValueError:
        raise ValueError("map file lacks the '---' separator") from None
    header = json.loads("\n".join(lines[1:sep]))
    rows = [ln for ln in lines[sep + 1:] if ln]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("grid rows must be non-empty and equally long")
    heights = np.zeros((len(rows), len(rows[0])))
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            if ch == ".":
                continue
            if ch == "#":
                heights[i, j] = math.inf
            elif ch in "123456789":
                heights[i, j] = int(ch) * HEIGHT_UNIT
            else:
                raise ValueError(f"unknown map character {ch!r}")
    humans = [Humanoid.from_dict(h) for h in header.get("humanoids", [])]
    return OccupancyWorld(float(header["resolution"]), heights, tuple(humans))


def save_world(world: OccupancyWorld, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_world(world))


def load_world(path) -> OccupancyWorld:
    with open(path, encoding="utf-8") as f:
        return loads_world(f.read())
