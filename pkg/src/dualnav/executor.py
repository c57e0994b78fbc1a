"""Dual-rate closed loop: slow planner, fast trajectory policy, one shared goal slot."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from dualnav.flow.model import encode_condition
from dualnav.flow.sampling import sample_trajectory
from dualnav.flow.trajectory import anchor_to_world, arc_lengths
from dualnav.planner import NoRouteError, PlannerOutput
from dualnav.world import (
    Action,
    AgentState,
    OccupancyWorld,
    check_collision,
    move_disc,
    render,
    step_agent,
    step_humanoids,
    wrap_angle,
)

STOPPED, TIMEOUT, NO_ROUTE = "Stopped", "Timeout", "NoRoute"


@dataclass(frozen=True)
class SlotEntry:
    output: PlannerOutput
    anchor_observation: object
    issue_time: float
    version: int


class GoalSlot:
    """Single-writer mailbox between the planner and the policy.

    Entries are immutable and replaced by a single reference swap, so a
    reader never sees a half-written goal.
    """

    def __init__(self):
        self._entry = None
        self._version = 0

    def publish(self, output: PlannerOutput, anchor_observation, issue_time: float) -> int:
        self._version += 1
        self._entry = SlotEntry(output, anchor_observation, float(issue_time), self._version)
        return self._version

    @property
    def version(self) -> int:
        return self._version

    def read(self) -> SlotEntry | None:
        return self._entry


@dataclass(frozen=True)
class ExecutorConfig:
    planner_hz: float = 2.0
    policy_hz: float = 30.0
    max_sim_time: float = 30.0
    agent_radius: float = 0.2
    n_flow_steps: int = 8
    planner_latency_ticks: int = 0
    lookahead: float = 0.4
    v_max: float = 1.0
    max_yaw_rate: float = 2.0

    def __post_init__(self):
        if self.planner_hz <= 0 or self.policy_hz <= 0:
            raise ValueError("rates must be positive")
        ratio = self.policy_hz / self.planner_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("policy_hz must be an integer multiple of planner_hz")
        if self.max_sim_time < 0 or self.n_flow_steps < 1 or self.planner_latency_ticks < 0:
            raise ValueError("invalid executor limits")

    @property
    def control_dt(self) -> float:
        return 1.0 / self.policy_hz

    @property
    def ratio(self) -> int:
        return int(round(self.policy_hz / self.planner_hz))

    @property
    def n_ticks(self) -> int:
        return int(math.floor(self.max_sim_time * self.policy_hz + 1e-9))


@dataclass
class EpisodeTrace:
    episode_id: str
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    planner_records: list = field(default_factory=list)
    policy_records: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    terminal_cause: str | None = None
    end_time: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.states])

    @property
    def final_state(self) -> AgentState:
        return self.states[-1]

    @property
    def human_hits(self) -> int:
        return sum(1 for c in self.collisions if c["human_hit"])

    @property
    def path_length(self) -> float:
        p = self.positions
        return float(arc_lengths(p)[-1]) if len(p) > 1 else 0.0

    def to_records(self):
        """JSON-ready records; each slot version's first trajectory is kept."""
        yield {"type": "episode", "id": self.episode_id, "terminal_cause": self.terminal_cause,
               "end_time": self.end_time}
        for t, s in zip(self.times, self.states):
            yield {"type": "state", "t": t, **s.to_dict()}
        for r in self.planner_records:
            yield {"type": "planner", **r}
        for r in self.policy_records:
            yield {"type": "policy", **r}
        seen = set()
        for r in self.trajectories:
            if r["version"] in seen:
                continue
            seen.add(r["version"])
            yield {"type": "trajectory", "tick": r["tick"], "version": r["version"],
                   "waypoints": np.asarray(r["waypoints"]).tolist()}
        for c in self.collisions:
            yield {"type": "collision", **c}

    def write_jsonl(self, fh) -> None:
        for rec in self.to_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _project_progress(path: np.ndarray, cum: np.ndarray, p: np.ndarray) -> float:
    a, b = path[:-1], path[1:]
    ab = b - a
    den = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-18)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / den, 0.0, 1.0)
    q = a + t[:, None] * ab
    d = np.hypot(*(q - p).T)
    k = int(np.argmin(d))
    return float(cum[k] + t[k] * math.sqrt(den[k]))


def track_step(state: AgentState, traj, anchor_state: AgentState, control_dt: float, v_max: float = 1.0,
               lookahead: float = 0.4, max_yaw_rate: float = 2.0, world: OccupancyWorld | None = None,
               agent_radius: float = 0.2) -> AgentState:
    """Pure-pursuit step along an anchor-frame trajectory.

    The agent's progress is its closest point on the path (anchor origin
    prepended); it heads for the first waypoint more than ``lookahead``
    beyond that progress, or the path end.  Translation is holonomic; yaw
    turns toward the motion direction at most ``max_yaw_rate``.  Walls and
    humanoids both stop the agent; it slides along them.
    """
    pts = anchor_to_world(traj, anchor_state)
    path = np.vstack([[anchor_state.x, anchor_state.y], pts])
    cum = arc_lengths(path)
    p = state.position
    s = _project_progress(path, cum, p)
    ahead = np.nonzero(cum[1:] > s + lookahead)[0]
    target = path[1 + ahead[0]] if len(ahead) else path[-1]
    delta = target - p
    dist = float(np.hypot(*delta))
    if dist < 1e-9:
        return state
    step = min(v_max * control_dt, dist)
    move = delta / dist * step
    new_p = p + move if world is None else move_disc(world, p, move, agent_radius, slide=True, humans=True)
    heading = math.atan2(delta[1], delta[0])
    dyaw = wrap_angle(heading - state.yaw)
    lim = max_yaw_rate * control_dt
    dyaw = max(-lim, min(lim, dyaw))
    return state.replace(x=float(new_p[0]), y=float(new_p[1]), yaw=state.yaw + dyaw)


def _sample_seed(seed, version: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(version)])


def run_episode(world: OccupancyWorld, episode, planner, model, cfg: ExecutorConfig | None = None,
                seed: int = 0, trajectory_fn=None) -> EpisodeTrace:
    """Simulate one episode at the policy rate.

    Tick ``k`` covers ``[k dt, (k+1) dt)``.  On planner ticks the planner sees
    the current view and publishes to the slot (after
    ``planner_latency_ticks``).  Then humanoids advance, the policy acts on
    whatever the slot holds, and collisions are checked.  ``trajectory_fn``
    replaces the flow policy (``(entry, current_obs, seed) -> Trajectory32``)
    for scripted tests.
    """
    cfg = cfg or ExecutorConfig()
    dt = cfg.control_dt
    world = world.with_humanoids(episode.humanoids) if episode.humanoids else world
    state = episode.start
    goal = episode.goal
    trace = EpisodeTrace(episode.id, [0.0], [state])
    slot = GoalSlot()
    pending = []
    queue, queue_version = [], 0
    for k in range(cfg.n_ticks):
        t = k * dt
        if k % cfg.ratio == 0:
            obs = render(world, state, sim_time=t)
            try:
                out = planner.plan_step(world, state, goal, obs, t)
            except NoRouteError as e:
                trace.planner_records.append({"tick": k, "t": t, "kind": "noroute", "text": str(e)})
                trace.terminal_cause = NO_ROUTE
                trace.end_time = t
                return trace
            trace.planner_records.append({"tick": k, "t": t, "kind": out.kind, "text": out.to_text()})
            pending.append((k + cfg.planner_latency_ticks, out, obs, t))
        while pending and pending[0][0] <= k:
            _, out, obs, t_issue = pending.pop(0)
            slot.publish(out, obs, t_issue)

        if world.humanoids:
            world = step_humanoids(world, dt)

        entry = slot.read()
        rec = {"tick": k, "t": t, "version": slot.version,
               "anchor_time": None if entry is None else entry.issue_time,
               "mode": "idle" if entry is None else entry.output.kind}
        trace.policy_records.append(rec)
        if entry is not None and entry.output.kind == "stop":
            trace.terminal_cause = STOPPED
            trace.end_time = t
            return trace
        if entry is not None and entry.output.kind == "adjust":
            if queue_version != entry.version:
                queue, queue_version = list(entry.output.actions), entry.version
            if queue:
                a = queue.pop(0)
                state = step_agent(world, state, a, cfg.agent_radius)
                trace.actions.append({"tick": k, "action": Action(a).name})
        elif entry is not None and entry.output.kind == "goal":
            cur = render(world, state, sim_time=t + dt)
            if trajectory_fn is not None:
                traj = trajectory_fn(entry, cur, _sample_seed(seed, entry.version))
            else:
                cond = encode_condition(entry.output.pixel_goal, entry.anchor_observation, cur, model)
                traj = sample_trajectory(model, cond, cfg.n_flow_steps, _sample_seed(seed, entry.version))
            trace.trajectories.append({"tick": k, "version": entry.version, "waypoints": traj})
            state = track_step(state, traj, entry.anchor_observation.agent_state, dt, cfg.v_max,
                               cfg.lookahead, cfg.max_yaw_rate, world, cfg.agent_radius)

        report = check_collision(world, state, cfg.agent_radius)
        if report.static_hit or report.human_hit:
            trace.collisions.append({"tick": k, "t": t + dt, "static_hit": report.static_hit,
                                     "human_hit": report.human_hit})
        trace.times.append((k + 1) * dt)
        trace.states.append(state)
    trace.terminal_cause = TIMEOUT
    trace.end_time = cfg.n_ticks * dt
    return trace
