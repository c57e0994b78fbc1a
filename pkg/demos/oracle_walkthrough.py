"""Walk through one procedurally generated episode without any learning.

1. Build a world and sample an episode in it.
2. Cut the ground-truth path into grounding samples (pixel goals, view
   adjustments and a final STOP) and show what each one looks like.
3. Close the loop at both rates: the oracle planner picks pixel goals at
   2 Hz and a scripted fast policy replays the planner's own path at 30 Hz.
4. Score the run.

    python demos/oracle_walkthrough.py [seed]
"""

import sys

import numpy as np

from dualnav.benchmark.episodes import generate_episodes, generate_world
from dualnav.benchmark.metrics import episode_metrics
from dualnav.executor import ExecutorConfig, run_episode
from dualnav.flow.trajectory import resample32, world_to_anchor
from dualnav.planner import OraclePlanner
from dualnav.projection import segment_episode
from dualnav.world import render

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

world = generate_world(seed)
free = 1.0 - world.occupied.mean()
print(f"world: {world.heights.shape[1]}x{world.heights.shape[0]} cells at {world.resolution} m, {free:.0%} free")

episode = generate_episodes(world, 1, seed, world_name="demo")[0]
s = episode.start
gt_len = episode.shortest_length
print(f"episode: start ({s.x:.2f}, {s.y:.2f}) -> goal ({episode.goal[0]:.2f}, {episode.goal[1]:.2f}), "
      f"ground-truth path {gt_len:.2f} m")

samples = segment_episode(episode.gt_trajectory, world, start_state=s)
print(f"\n{len(samples)} grounding samples along the ground-truth path:")
for k, smp in enumerate(samples):
    if smp.kind == "goal":
        pg = smp.pixel_goal
        end = smp.target_trajectory[-1]
        print(f"  {k:2d} goal    pixel ({pg.u:2d}, {pg.v:2d})  target ends {end[0]:5.2f} m ahead, {end[1]:+5.2f} m lateral")
    elif smp.kind == "adjust":
        print(f"  {k:2d} adjust  {' '.join(a.name.lower() for a in smp.view_actions)}")
    else:
        print(f"  {k:2d} stop")

obs = render(world, s)
finite = obs.depth[np.isfinite(obs.depth)]
print(f"\nfirst view: {obs.depth.shape[1]}x{obs.depth.shape[0]} depth, "
      f"{finite.size} pixels hit geometry (nearest {finite.min():.2f} m)" if finite.size else "\nfirst view: open floor")


def replay_plan(entry, obs, seed):
    """Stand-in for the learned policy: follow the planner's path up to its pixel goal."""
    out = entry.output
    pts = world_to_anchor(out.waypoints[1:out.goal_index + 1], entry.anchor_observation.agent_state)
    return resample32(pts)


trace = run_episode(world, episode, OraclePlanner(), None, ExecutorConfig(), trajectory_fn=replay_plan)
m = episode_metrics(trace, episode)
modes = [r["kind"] for r in trace.planner_records]
print(f"\nclosed loop: {trace.terminal_cause} after {trace.times[-1]:.1f} s "
      f"({len(trace.planner_records)} planner ticks: {modes.count('goal')} goal, "
      f"{modes.count('adjust')} adjust, {modes.count('stop')} stop)")
print(f"NE {m.NE:.2f} m  SR {m.SR}  SPL {m.SPL:.2f}  nDTW {m.nDTW:.2f}  TL {m.TL:.2f} m")
