"""Trajectory-to-image projection, pixel-goal labelling and episode segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dualnav.flow.trajectory import resample32, world_to_anchor
from dualnav.world import (
    STEP_ANGLE,
    Action,
    AgentState,
    CameraIntrinsics,
    Observation,
    OccupancyWorld,
    render,
    step_agent,
)

MAX_TURNS_PER_CHUNK = 4

GLYPHS = {
    Action.TURN_LEFT: "←",
    Action.TURN_RIGHT: "→",
    Action.LOOK_UP: "↑",
    Action.LOOK_DOWN: "↓",
}


class SegmentationError(RuntimeError):
    """An episode could not be cut into grounding samples."""


@dataclass(frozen=True)
class PixelGoal:
    u: int
    v: int
    source_state: AgentState

    def __post_init__(self):
        object.__setattr__(self, "u", int(self.u))
        object.__setattr__(self, "v", int(self.v))

    def to_text(self) -> str:
        return f"{self.u} {self.v}"

    @classmethod
    def from_text(cls, text: str, source_state: AgentState) -> "PixelGoal":
        u, v = text.split()
        return cls(int(u), int(v), source_state)


@dataclass(frozen=True, eq=False)
class GroundingSample:
    """One supervision record cut from a ground-truth trajectory.

    Exactly one of ``pixel_goal``, ``view_actions`` or ``is_stop`` is set.
    ``current_observation`` is an optional later view along the target path,
    used to train the policy on stale anchors.
    """

    anchor_observation: Observation
    view_actions: tuple = ()
    pixel_goal: PixelGoal | None = None
    target_trajectory: np.ndarray | None = None
    is_stop: bool = False
    goal_index: int = -1
    current_observation: Observation | None = None
    tags: tuple = ()

    def __post_init__(self):
        kinds = [self.pixel_goal is not None, len(self.view_actions) > 0, bool(self.is_stop)]
        if sum(kinds) != 1:
            raise ValueError("a sample is exactly one of goal / view adjustment / stop")
        if self.pixel_goal is not None and self.target_trajectory is None:
            raise ValueError("pixel-goal samples need a target trajectory")

    @property
    def kind(self) -> str:
        if self.pixel_goal is not None:
            return "goal"
        if self.view_actions:
            return "adjust"
        return "stop"

    def assistant_text(self) -> str:
        if self.is_stop:
            return "STOP"
        if self.view_actions:
            return " ".join(GLYPHS[a] for a in self.view_actions)
        return self.pixel_goal.to_text()


def lift(points) -> np.ndarray:
    """Floor points (N, 2) -> (N, 3) at height zero; 3D input passes through."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[None]
    if p.shape[1] == 3:
        return p
    return np.hstack([p, np.zeros((len(p), 1))])


def camera_coords(points, state: AgentState) -> np.ndarray:
    """World points (N, 3) -> camera (forward, left, up) coordinates."""
    p = lift(points)
    d = p - np.array([state.x, state.y, state.camera_height])
    cy_, sy_ = math.cos(state.yaw), math.sin(state.yaw)
    bf = d[:, 0] * cy_ + d[:, 1] * sy_
    bl = -d[:, 0] * sy_ + d[:, 1] * cy_
    bu = d[:, 2]
    cp, sp = math.cos(state.pitch), math.sin(state.pitch)
    fwd = bf * cp + bu * sp
    up = -bf * sp + bu * cp
    return np.stack([fwd, bl, up], axis=1)


def project_points(points, state: AgentState, intr: CameraIntrinsics):
    """Vectorised projection.

    Returns ``(u, v, rng, ok)`` with sub-pixel coordinates, camera range and a
    mask of points in front of the camera whose rounded pixel is inside the
    image.
    """
    c = camera_coords(points, state)
    fwd = c[:, 0]
    in_front = fwd > 1e-9
    safe = np.where(in_front, fwd, 1.0)
    u = intr.cx - intr.fx * c[:, 1] / safe
    v = intr.cy - intr.fy * c[:, 2] / safe
    rng = np.linalg.norm(c, axis=1)
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    ok = in_front & (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
    return u, v, rng, ok


def project_point(p, state: AgentState, intr: CameraIntrinsics):
    """Project one world point; ``None`` when behind the camera or off-image."""
    u, v, rng, ok = project_points(p, state, intr)
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(rng[0])


def pixel_index(u: float, v: float) -> tuple:
    return int(math.floor(u + 0.5)), int(math.floor(v + 0.5))


def visible_projected_waypoints(traj, obs: Observation, tol: float) -> list:
    """Waypoints that project into the image and are not behind rendered depth.

    Returns ``(index, u, v)`` triples with integer pixels, ordered by index.
    """
    traj = lift(traj)
    if len(traj) == 0:
        return []
    u, v, rng, ok = project_points(traj, obs.agent_state, obs.intrinsics)
    out = []
    for i in np.flatnonzero(ok):
        ui, vi = pixel_index(u[i], v[i])
        if rng[i] <= obs.depth[vi, ui] + tol:
            out.append((int(i), ui, vi))
    return out


def farthest_pixel_goal(traj, obs: Observation, tol: float, min_index: int = 0):
    """Visible waypoint with the greatest index, as ``(PixelGoal, index)``."""
    vis = [w for w in visible_projected_waypoints(traj, obs, tol) if w[0] >= min_index]
    if not vis:
        return None
    i, u, v = vis[-1]
    return PixelGoal(u, v, obs.agent_state), i


def bearing_to(point, state: AgentState) -> float:
    dx = point[0] - state.x
    dy = point[1] - state.y
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    b = math.atan2(-s * dx + c * dy, c * dx + s * dy)
    # ties at +-180 deg resolve to a left turn
    return math.pi if b == -math.pi else b


def next_waypoint_index(traj, state: AgentState, start: int = 0, min_dist: float = 0.05) -> int:
    traj = lift(traj)
    for i in range(start, len(traj)):
        if math.hypot(traj[i, 0] - state.x, traj[i, 1] - state.y) > min_dist:
            return i
    return len(traj) - 1


def synthesize_view_adjustment(traj, state: AgentState, obs: Observation, tol: float | None = None,
                               start: int = 0) -> list:
    """Discrete actions that bring the next waypoint into a groundable view.

    Out-of-FOV waypoints produce a chunk of at most four 15 degree turns
    toward them; waypoints below (above) the image produce one look down (up).

    Raises:
        ValueError: when some waypoint is already groundable.
    """
    intr = obs.intrinsics
    tol = 0.05 if tol is None else tol
    if farthest_pixel_goal(traj, obs, tol, min_index=start) is not None:
        raise ValueError("a pixel goal is available; no view adjustment needed")
    traj = lift(traj)
    k = next_waypoint_index(traj, state, start)
    target = traj[k]
    b = bearing_to(target, state)
    half_left = math.atan2(intr.cx + 0.5, intr.fx)
    half_right = math.atan2(intr.width - 0.5 - intr.cx, intr.fx)
    if b > half_left or -b > half_right:
        n = min(MAX_TURNS_PER_CHUNK, math.ceil(abs(b) / STEP_ANGLE - 1e-9))
        return [Action.TURN_LEFT if b > 0 else Action.TURN_RIGHT] * n
    c = camera_coords(target, state)[0]
    if c[0] <= 1e-9:
        # in the horizontal field but behind the image plane: steeply below
        return [Action.LOOK_DOWN if c[2] < 0 else Action.LOOK_UP]
    v = intr.cy - intr.fy * c[2] / c[0]
    if v >= intr.height - 0.5 and state.pitch > -math.pi / 2 + 1e-9:
        return [Action.LOOK_DOWN]
    if v < -0.5 and state.pitch < math.pi / 2 - 1e-9:
        return [Action.LOOK_UP]
    # in frame but occluded: widen the view
    if abs(b) >= STEP_ANGLE / 2:
        return [Action.TURN_LEFT if b > 0 else Action.TURN_RIGHT]
    if state.pitch > -math.pi / 2 + 1e-9:
        return [Action.LOOK_DOWN]
    return [Action.LOOK_UP]


def relative_subpath(traj2d, anchor: AgentState, i0: int, i1: int) -> np.ndarray:
    return world_to_anchor(np.asarray(traj2d)[i0:i1 + 1], anchor)


def state_at(traj2d, index: int, pitch: float, camera_height: float) -> AgentState:
    traj2d = np.asarray(traj2d)
    if index > 0:
        d = traj2d[index] - traj2d[index - 1]
        yaw = math.atan2(d[1], d[0])
    else:
        d = traj2d[min(1, len(traj2d) - 1)] - traj2d[0]
        yaw = math.atan2(d[1], d[0]) if np.any(d) else 0.0
    return AgentState(traj2d[index, 0], traj2d[index, 1], yaw, pitch, camera_height)


def segment_episode(traj, world: OccupancyWorld, intr: CameraIntrinsics | None = None,
                    start_state: AgentState | None = None, tol: float | None = None,
                    max_adjust: int = 12, rng: np.random.Generator | None = None,
                    current_reach: float = 0.5, tags: tuple = ()) -> list:
    """Cut a ground-truth floor trajectory into grounding samples.

    At every anchor the view is rendered; the farthest visible future
    waypoint becomes a pixel-goal sample whose target is the resampled path
    up to it, and the anchor jumps there.  Without a visible waypoint a view
    adjustment chunk is emitted and applied.  The final pose yields STOP.

    With ``rng`` each goal sample also carries a ``current_observation``
    rendered a random distance (up to ``current_reach``) along its target.

    Raises:
        ValueError: on an empty trajectory.
        SegmentationError: when view adjustment fails to find a goal.
    """
    traj = np.asarray(traj, dtype=np.float64).reshape(-1, 2)
    if len(traj) == 0:
        raise ValueError("trajectory has no waypoints")
    intr = intr or CameraIntrinsics()
    tol = world.resolution / 2 if tol is None else tol
    if start_state is None:
        start_state = state_at(traj, 0, 0.0, AgentState(0, 0).camera_height)
    state = start_state
    anchor = 0
    last = len(traj) - 1
    samples = []
    n_adjust = 0
    while True:
        obs = render(world, state, intr)
        if anchor == last:
            samples.append(GroundingSample(obs, is_stop=True, goal_index=anchor, tags=tags))
            return samples
        found = farthest_pixel_goal(traj, obs, tol, min_index=anchor + 1)
        if found is not None:
            goal, gi = found
            target = resample32(relative_subpath(traj, state, anchor, gi))
            current = None
            if rng is not None:
                current = _current_view(world, intr, traj, anchor, gi, state, rng, current_reach)
            samples.append(GroundingSample(obs, pixel_goal=goal, target_trajectory=target,
                                           goal_index=gi, current_observation=current, tags=tags))
            state = state_at(traj, gi, state.pitch, state.camera_height)
            anchor = gi
            n_adjust = 0
            continue
        n_adjust += 1
        if n_adjust > max_adjust:
            raise SegmentationError(f"no groundable view from waypoint {anchor}")
        actions = synthesize_view_adjustment(traj, state, obs, tol, start=anchor + 1)
        samples.append(GroundingSample(obs, view_actions=tuple(actions), goal_index=anchor, tags=tags))
        for a in actions:
            state = step_agent(None, state, a)


def _current_view(world, intr, traj, i0, i1, anchor_state, rng, reach):
    from dualnav.flow.trajectory import arc_lengths, interpolate

    pts = np.vstack([[anchor_state.x, anchor_state.y], traj[i0 + 1:i1 + 1]])
    cum = arc_lengths(pts)
    s = rng.uniform(0.0, min(reach, cum[-1]))
    p = interpolate(pts, cum, np.array([s, min(s + 0.1, cum[-1])]))
    d = p[1] - p[0]
    yaw = math.atan2(d[1], d[0]) if np.hypot(*d) > 1e-9 else anchor_state.yaw
    # the tracker turns at a bounded rate, so blend toward the path heading
    dyaw = math.remainder(yaw - anchor_state.yaw, 2 * math.pi)
    yaw = anchor_state.yaw + rng.uniform(0.0, 1.0) * dyaw
    st = anchor_state.replace(x=p[0, 0], y=p[0, 1], yaw=yaw)
    return render(world, st, intr)
