"""``dualnav`` command line: gen-worlds, gen-data, train, eval, diagnose.

Every subcommand resolves its parameters as defaults < ``--config`` JSON <
explicit flags, writes the result to ``config.json`` in its output
directory, and derives all randomness from the one ``--seed``.  Failures
exit nonzero after printing a single line ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

import numpy as np

from dualnav.benchmark.data import generate_samples, kind_histogram, read_dataset, write_dataset
from dualnav.benchmark.episodes import (
    PlacementError,
    generate_episodes,
    generate_world,
    load_episodes,
    load_world_set,
    place_humanoids,
    save_episodes,
    save_world_set,
    world_seed,
)
from dualnav.benchmark.suite import diagnose, metrics_csv, run_suite
from dualnav.executor import ExecutorConfig
from dualnav.flow.model import ModelConfig, PolicyModel, Variant, load_checkpoint, save_checkpoint
from dualnav.flow.training import FlowDataset, TrainConfig, TrainingDiverged, train
from dualnav.world import CameraIntrinsics

log = logging.getLogger("dualnav")

EXIT_CODES = {"missing-input": 3, "invalid-input": 4, "io-error": 5, "diverged": 6, "internal": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# -- run configs -------------------------------------------------------------------

@dataclass
class GenWorldsRun:
    out: str = "worlds"
    n: int = 10
    seed: int = 0
    prefix: str = "w"
    furniture: int = 20


@dataclass
class GenDataRun:
    worlds: str = "worlds"
    out: str = "data"
    seed: int = 0
    episodes_per_world: int = 90
    min_dist: float = 3.0
    max_dist: float = 10.0
    humanoids: int = 0
    social_fraction: float = 1.0
    social: bool = False
    mask_threshold: float = 0.05
    suite_only: bool = False


@dataclass
class TrainRun:
    data: str = "data/dataset.jsonl"
    out: str = "model"
    seed: int = 0
    variant: str = "full"
    fraction: float = 1.0
    output: str = "velocity"
    width: int = 128
    depth: int = 4
    steps: int = 6000
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    schedule: str = "linear"
    extra_data: tuple = ()


@dataclass
class EvalRun:
    checkpoint: str = "model/model.ckpt"
    suite: str = "suite/episodes.json"
    worlds: str = "suite_worlds"
    out: str = "eval"
    seed: int = 0
    max_sim_time: float = 30.0
    planner_hz: float = 2.0
    policy_hz: float = 30.0
    n_flow_steps: int = 8
    planner_latency_ticks: int = 0
    traces: bool = False


@dataclass
class DiagnoseRun:
    checkpoint: str = "model/model.ckpt"
    data: str = "data/dataset.jsonl"
    out: str = "diagnose"
    seed: int = 0
    n: int = 1000
    n_flow_steps: int = 8


def _resolve(run_cls, args: argparse.Namespace):
    """Defaults, then the ``--config`` file, then flags given on the command line."""
    values = {f.name: f.default for f in fields(run_cls) if f.default is not MISSING}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as e:
            raise CliError("missing-input", f"config file {args.config} not found") from e
        except json.JSONDecodeError as e:
            raise CliError("invalid-input", f"config file {args.config}: {e}") from e
        unknown = set(doc) - set(values)
        if unknown:
            raise CliError("invalid-input", f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(doc)
    for k in values:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    if "extra_data" in values:
        values["extra_data"] = tuple(values["extra_data"])
    return run_cls(**values)


def _prepare_out(run) -> Path:
    out = Path(run.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(asdict(run), fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise CliError("io-error", f"cannot write to {out}: {e}") from e
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _need(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-input", f"{what} {p} does not exist")
    return p


def _load_model(path: str) -> PolicyModel:
    p = _need(path, "checkpoint")
    try:
        return load_checkpoint(p)
    except (ValueError, KeyError) as e:
        raise CliError("invalid-input", str(e)) from e


# -- subcommands -------------------------------------------------------------------

def cmd_gen_worlds(run: GenWorldsRun) -> Path:
    if run.n < 0:
        raise CliError("invalid-input", "n must be non-negative")
    out = _prepare_out(run)
    worlds = {f"{run.prefix}{i:03d}": generate_world(world_seed(run.seed, i), furniture=run.furniture)
              for i in range(run.n)}
    save_world_set(worlds, out, seed=run.seed)
    log.info("wrote %d worlds to %s", len(worlds), out)
    return out


def _place_all(episodes, worlds, run: GenDataRun, root: np.random.SeedSequence):
    """Put humanoids on a seeded ``social_fraction`` of the episodes."""
    pick_ss, place_ss = root.spawn(2)
    chosen = np.random.default_rng(pick_ss).random(len(episodes)) < run.social_fraction
    out, failures = [], []
    for ep, use, child in zip(episodes, chosen, place_ss.spawn(len(episodes))):
        if use:
            try:
                ep = place_humanoids(ep, worlds[ep.world], run.humanoids, child)
            except PlacementError as e:
                failures.append([ep.id, str(e)])
                log.info("episode %s stays static: %s", ep.id, e)
        out.append(ep)
    return out, failures


def cmd_gen_data(run: GenDataRun) -> Path:
    if run.social and run.humanoids < 1:
        raise CliError("invalid-input", "social data needs --humanoids >= 1")
    _need(run.worlds, "world directory")
    try:
        worlds = load_world_set(run.worlds)
    except FileNotFoundError as e:
        raise CliError("missing-input", str(e)) from e
    out = _prepare_out(run)
    episodes = []
    for i, (name, world) in enumerate(worlds.items()):
        episodes += generate_episodes(world, run.episodes_per_world, [run.seed, 0, i], name, prefix=f"{name}_",
                                      min_dist=run.min_dist, max_dist=run.max_dist)
    failures = []
    if run.humanoids > 0:
        episodes, failures = _place_all(episodes, worlds, run, np.random.SeedSequence([run.seed, 1]))
    save_episodes(episodes, out / "episodes.json")
    res = {w.resolution for w in worlds.values()}
    manifest = {"seed": run.seed, "worlds": {"directory": str(Path(run.worlds).resolve()),
                                             "static_keys": {k: w.static_key for k, w in worlds.items()}},
                "intrinsics": asdict(CameraIntrinsics()), "tolerance": [r / 2 for r in sorted(res)],
                "n_worlds": len(worlds), "n_episodes": len(episodes),
                "n_social_episodes": sum(e.is_social for e in episodes), "placement_failures": failures}
    if not run.suite_only:
        errors = []
        samples = generate_samples(worlds, episodes, [run.seed, 2], social=run.social,
                                   mask_threshold=run.mask_threshold, errors=errors)
        write_dataset(samples, out / "dataset.jsonl")
        hist = kind_histogram(samples)
        log.info("sample kinds: %s", hist)
        manifest.update(n_samples=len(samples), kinds=hist,
                        n_social_samples=sum("social" in s.tags for s in samples),
                        skipped_episodes=[list(e) for e in errors])
    _write_json(out / "manifest.json", manifest)
    return out


def _dataset(paths, cfg: ModelConfig) -> FlowDataset:
    parts = []
    for p in paths:
        samples = read_dataset(_need(p, "dataset"))
        try:
            parts.append(FlowDataset.from_samples(samples, cfg))
        except ValueError as e:
            raise CliError("invalid-input", f"{p}: {e}") from e
    return parts[0] if len(parts) == 1 else FlowDataset.concat(parts)


def cmd_train(run: TrainRun) -> Path:
    try:
        variant = Variant(run.variant)
        mcfg = ModelConfig(width=run.width, depth=run.depth, output=run.output, variant=variant,
                           init_seed=run.seed)
        tcfg = TrainConfig(steps=run.steps, batch_size=run.batch_size, lr=run.lr, optimizer=run.optimizer,
                           schedule=run.schedule, seed=run.seed)
    except ValueError as e:
        raise CliError("invalid-input", str(e)) from e
    data = _dataset((run.data, *run.extra_data), mcfg)
    out = _prepare_out(run)
    if run.fraction != 1.0:
        try:
            data = data.fraction(run.fraction, np.random.SeedSequence([run.seed, 1]))
        except ValueError as e:
            raise CliError("invalid-input", str(e)) from e
    log.info("training %s on %d trajectories for %d steps", variant.value, len(data), run.steps)
    progress = lambda step, loss: step % 500 == 0 and log.info("step %d loss %.5f", step, loss)
    try:
        model, tlog = train(data, PolicyModel(mcfg), tcfg, progress=progress)
    except TrainingDiverged as e:
        raise CliError("diverged", str(e)) from e
    save_checkpoint(model, out / "model.ckpt", extra={"n_train": len(data), "fraction": run.fraction})
    tlog.write_csv(out / "train_log.csv")
    return out


def cmd_eval(run: EvalRun) -> Path:
    model = _load_model(run.checkpoint)
    episodes = load_episodes(_need(run.suite, "suite"))
    _need(run.worlds, "world directory")
    worlds = load_world_set(run.worlds)
    missing = {e.world for e in episodes} - set(worlds)
    if missing:
        raise CliError("invalid-input", f"suite references unknown worlds: {', '.join(sorted(missing))}")
    try:
        ecfg = ExecutorConfig(planner_hz=run.planner_hz, policy_hz=run.policy_hz, max_sim_time=run.max_sim_time,
                              n_flow_steps=run.n_flow_steps, planner_latency_ticks=run.planner_latency_ticks)
    except ValueError as e:
        raise CliError("invalid-input", str(e)) from e
    out = _prepare_out(run)
    traces = [] if run.traces else None
    try:
        report, rows, failures = run_suite(episodes, worlds, model, ecfg, run.seed, traces=traces)
    except ValueError as e:
        raise CliError("invalid-input", str(e)) from e
    (out / "metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    table = report.table()
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    summary = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(report).items()}
    _write_json(out / "summary.json", {"report": summary, "failures": [list(f) for f in failures]})
    if traces is not None:
        with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
            for tr in traces:
                tr.write_jsonl(fh)
    print(table)
    return out


def cmd_diagnose(run: DiagnoseRun) -> Path:
    model = _load_model(run.checkpoint)
    samples = read_dataset(_need(run.data, "dataset"))
    if run.n < 1:
        raise CliError("invalid-input", "n must be positive")
    out = _prepare_out(run)
    try:
        rows = diagnose(model, samples, run.n, run.seed, run.n_flow_steps)
    except ValueError as e:
        raise CliError("invalid-input", str(e)) from e
    with open(out / "consistency.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "pixel_distance", "angular_deviation"])
        for i, (px, deg) in enumerate(rows):
            w.writerow([i, repr(float(px)), repr(float(deg))])
    med = {"median_pixel_distance": float(np.median(rows[:, 0])),
           "median_angular_deviation": float(np.median(rows[:, 1])), "n": int(run.n)}
    _write_json(out / "summary.json", med)
    print(f"median pixel distance {med['median_pixel_distance']:.2f} px, "
          f"median angular deviation {med['median_angular_deviation']:.2f} deg")
    return out


# -- parser ------------------------------------------------------------------------

def _flag(p, name, typ, help_, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, help=help_, **kw)


def _switch(p, name, help_):
    p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_const", const=True, default=None,
                   help=help_)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualnav", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON file of parameter overrides")
        _flag(p, "out", str, "output directory")
        _flag(p, "seed", int, "root seed")
        return p

    p = command("gen-worlds", "generate procedural occupancy worlds")
    _flag(p, "n", int, "number of worlds")
    _flag(p, "prefix", str, "world name prefix")
    _flag(p, "furniture", int, "furniture boxes per world")

    p = command("gen-data", "sample episodes and grounding datasets over a world set")
    _flag(p, "worlds", str, "world directory from gen-worlds")
    _flag(p, "episodes_per_world", int, "episodes sampled per world")
    _flag(p, "min_dist", float, "shortest route length, metres")
    _flag(p, "max_dist", float, "longest route length, metres")
    _flag(p, "humanoids", int, "humanoids placed across each chosen route")
    _flag(p, "social_fraction", float, "fraction of episodes that get humanoids")
    _switch(p, "social", "collect detour samples around visible humanoids")
    _flag(p, "mask_threshold", float, "human-mask ratio that triggers a replan")
    _switch(p, "suite_only", "write episodes only (an evaluation suite)")

    p = command("train", "train a trajectory policy")
    _flag(p, "data", str, "dataset.jsonl from gen-data")
    p.add_argument("--extra-data", dest="extra_data", action="append", default=None,
                   help="additional dataset appended to the pool (repeatable)")
    _flag(p, "variant", str, "full, pixel_only, latent_only or unconditioned",
          choices=[v.value for v in Variant])
    _flag(p, "fraction", float, "seeded fraction of the trajectory pool to train on")
    _flag(p, "output", str, "network output parametrization", choices=["velocity", "sample"])
    _flag(p, "width", int, "velocity network width")
    _flag(p, "depth", int, "velocity network residual blocks")
    _flag(p, "steps", int, "optimizer steps")
    _flag(p, "batch_size", int, "batch size")
    _flag(p, "lr", float, "peak learning rate")
    _flag(p, "optimizer", str, "adam or momentum SGD", choices=["adam", "momentum"])
    _flag(p, "schedule", str, "noise schedule", choices=["linear", "cosine"])

    p = command("eval", "run a checkpoint through the closed-loop executor on a suite")
    _flag(p, "checkpoint", str, "model checkpoint")
    _flag(p, "suite", str, "episodes.json from gen-data")
    _flag(p, "worlds", str, "world directory the suite refers to")
    _flag(p, "max_sim_time", float, "episode time limit, seconds")
    _flag(p, "planner_hz", float, "planner rate")
    _flag(p, "policy_hz", float, "policy rate")
    _flag(p, "n_flow_steps", int, "Euler steps per trajectory sample")
    _flag(p, "planner_latency_ticks", int, "delay before a plan reaches the goal slot")
    _switch(p, "traces", "also write per-tick traces as JSONL")

    p = command("diagnose", "goal/trajectory consistency scatter")
    _flag(p, "checkpoint", str, "model checkpoint")
    _flag(p, "data", str, "dataset.jsonl to draw goal samples from")
    _flag(p, "n", int, "number of samples")
    _flag(p, "n_flow_steps", int, "Euler steps per trajectory sample")
    return ap


COMMANDS = {
    "gen-worlds": (GenWorldsRun, cmd_gen_worlds),
    "gen-data": (GenDataRun, cmd_gen_data),
    "train": (TrainRun, cmd_train),
    "eval": (EvalRun, cmd_eval),
    "diagnose": (DiagnoseRun, cmd_diagnose),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    run_cls, fn = COMMANDS[args.command]
    try:
        fn(_resolve(run_cls, args))
    except CliError as e:
        category, msg = e.category, str(e)
    except FileNotFoundError as e:
        category, msg = "missing-input", str(e)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        category, msg = "invalid-input", f"{type(e).__name__}: {e}"
    except OSError as e:
        category, msg = "io-error", str(e)
    except Exception as e:  # noqa: BLE001 - reported as one line
        category, msg = "internal", f"{type(e).__name__}: {e}"
    else:
        return 0
    print(f"error: {category}: {' '.join(msg.split())}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
