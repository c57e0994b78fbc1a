"""Suite evaluation through the executor, and the goal/trajectory consistency diagnostic."""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from dualnav.benchmark.metrics import MetricsReport, episode_metrics
from dualnav.executor import ExecutorConfig, run_episode
from dualnav.flow.model import encode_condition
from dualnav.flow.sampling import sample_trajectory
from dualnav.flow.trajectory import anchor_to_world
from dualnav.planner import OraclePlanner
from dualnav.projection import project_points
from dualnav.world import CameraIntrinsics, camera_to_world, wrap_angle

CSV_COLUMNS = ("id", "NE", "SR", "OS", "SPL", "nDTW", "TL", "HCR_event_count", "terminal_cause")


def episode_seed(root_seed, index: int) -> int:
    return int(np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, index]).generate_state(1)[0])


def run_suite(episodes, worlds: dict, model, cfg: ExecutorConfig | None = None, seed: int = 0,
              planner_factory=OraclePlanner, traces: list | None = None, progress=None):
    """Evaluate every episode and return ``(MetricsReport, rows, failures)``.

    Each episode gets a fresh planner and its own seed.  Exceptions inside an
    episode are recorded in ``failures`` and the episode is left out of the
    aggregate.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("empty suite")
    cfg = cfg or ExecutorConfig()
    rows, failures = [], []
    for k, ep in enumerate(episodes):
        try:
            tr = run_episode(worlds[ep.world], ep, planner_factory(), model, cfg, episode_seed(seed, k))
        except Exception as e:  # noqa: BLE001 - recorded, not fatal
            failures.append((ep.id, f"{type(e).__name__}: {e}"))
            continue
        if traces is not None:
            traces.append(tr)
        rows.append(episode_metrics(tr, ep))
        if progress is not None:
            progress(k, rows[-1])
    if not rows:
        raise RuntimeError(f"every episode failed; first error: {failures[0][1]}")
    return MetricsReport.aggregate(rows), rows, failures


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.id, repr(r.NE), int(r.SR), int(r.OS), repr(r.SPL), repr(r.nDTW), repr(r.TL),
                    r.HCR_event_count, r.terminal_cause])
    return buf.getvalue()


# -- consistency diagnostic -------------------------------------------------------

def goal_floor_bearing(pixel_goal, anchor_state, intr: CameraIntrinsics) -> float:
    """Anchor-frame bearing of the pixel goal's floor point (or of its ray, above the horizon)."""
    left = -(pixel_goal.u - intr.cx) / intr.fx
    up = -(pixel_goal.v - intr.cy) / intr.fy
    d = camera_to_world(np.array(1.0), np.array(left), np.array(up), anchor_state)
    return wrap_angle(math.atan2(d[1], d[0]) - anchor_state.yaw)


def consistency_diagnostic(traj, pixel_goal, anchor_state, intr: CameraIntrinsics | None = None) -> tuple:
    """(pixel distance, mean angular deviation in degrees) of a trajectory against its goal.

    The pixel distance is the smallest image distance from any projected
    waypoint to the goal pixel; it is ``inf`` when nothing projects.
    """
    intr = intr or CameraIntrinsics()
    traj = np.asarray(traj, dtype=np.float64)
    world_pts = anchor_to_world(traj, anchor_state)
    u, v, _, ok = project_points(world_pts, anchor_state, intr)
    if np.any(ok):
        dist = float(np.min(np.hypot(u[ok] - pixel_goal.u, v[ok] - pixel_goal.v)))
    else:
        dist = math.inf
    gb = goal_floor_bearing(pixel_goal, anchor_state, intr)
    wb = np.arctan2(traj[:, 1], traj[:, 0])
    dev = np.abs(np.remainder(wb - gb + np.pi, 2 * np.pi) - np.pi)
    return dist, float(np.degrees(np.mean(dev)))


def diagnose(model, samples, n: int, seed: int, n_flow_steps: int = 8) -> np.ndarray:
    """Run the diagnostic on ``n`` goal samples drawn with replacement; rows are (px, deg)."""
    goal = [s for s in samples if s.pixel_goal is not None]
    if not goal:
        raise ValueError("no pixel-goal samples to diagnose")
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(goal), size=n)
    out = np.empty((n, 2))
    for r, i in enumerate(picks):
        s = goal[i]
        cond = encode_condition(s.pixel_goal, s.anchor_observation, s.current_observation, model)
        traj = sample_trajectory(model, cond, n_flow_steps, np.random.SeedSequence([seed, r]))
        out[r] = consistency_diagnostic(traj, s.pixel_goal, s.anchor_observation.agent_state,
                                        s.anchor_observation.intrinsics)
    return out
