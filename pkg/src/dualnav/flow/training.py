"""Flow-matching objective, optimizers and the training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from dualnav.flow.model import ConditionFeatures, ModelConfig, PolicyModel, condition_features
from dualnav.flow.schedule import FlowSchedule, LinearSchedule, get_schedule, noise_trajectory, target_velocity
from dualnav.flow.trajectory import N_WAYPOINTS


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FlowDataset:
    """Clean trajectories (metres, anchor frame) with their encoder inputs."""

    x0: np.ndarray
    feats: ConditionFeatures

    def __post_init__(self):
        if self.x0.ndim != 3 or self.x0.shape[1:] != (N_WAYPOINTS, 2):
            raise ValueError("x0 must have shape (N, 32, 2)")
        if len(self.feats) != len(self.x0):
            raise ValueError("features and trajectories differ in length")

    def __len__(self):
        return len(self.x0)

    def take(self, idx) -> "FlowDataset":
        idx = np.asarray(idx)
        return FlowDataset(self.x0[idx], self.feats.take(idx))

    def fraction(self, frac: float, seed) -> "FlowDataset":
        """Seeded subsample of ``ceil(frac * N)`` items (at least one)."""
        if not 0 < frac <= 1:
            raise ValueError("fraction must be in (0, 1]")
        if frac == 1:
            return self
        n = max(1, math.ceil(frac * len(self)))
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=n, replace=False))
        return self.take(idx)

    @classmethod
    def concat(cls, parts) -> "FlowDataset":
        parts = list(parts)
        f = [p.feats for p in parts]
        return cls(np.concatenate([p.x0 for p in parts]),
                   ConditionFeatures(np.concatenate([x.pixel for x in f]), np.concatenate([x.anchor for x in f]),
                                     np.concatenate([x.obs for x in f])))

    @classmethod
    def from_samples(cls, samples, cfg: ModelConfig) -> "FlowDataset":
        """Keep pixel-goal samples only; other kinds carry no trajectory."""
        goal = [s for s in samples if s.pixel_goal is not None]
        if not goal:
            raise ValueError("no pixel-goal samples to train on")
        feats = [condition_features(s.pixel_goal, s.anchor_observation, s.current_observation, cfg) for s in goal]
        return cls(np.stack([np.asarray(s.target_trajectory, dtype=np.float64) for s in goal]),
                   ConditionFeatures.stack(feats))


def flow_loss(model, x0, feats: ConditionFeatures | None, seed, sched: FlowSchedule | None = None):
    """Mean squared velocity error and its gradients for one batch.

    Flow times and noise are drawn from ``seed`` so the loss is reproducible.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3 or len(x0) == 0:
        raise ValueError("flow_loss needs a non-empty (B, 32, 2) batch")
    sched = sched or LinearSchedule()
    rng = np.random.default_rng(seed)
    b = len(x0)
    u = rng.uniform(size=b)
    eps = rng.standard_normal(x0.shape)
    x0n = x0 / model.config.traj_scale
    xu = noise_trajectory(x0n, u, eps, sched)
    vt = target_velocity(x0n, eps, sched, u)
    cache = {}
    pred = model.forward(xu, u, feats, cache)
    r = pred - vt
    loss = float(np.mean(r * r))
    grads = model.backward(cache, 2.0 * r / r.size)
    return loss, grads


class MomentumSGD:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr, self.momentum, self.buf = lr, momentum, {}

    def step(self, params, grads, lr):
        for k, g in grads.items():
            v = self.buf.get(k)
            v = g.copy() if v is None else self.momentum * v + g
            self.buf[k] = v
            params[k] -= lr * v


class Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 6000
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    lr_decay: str = "cosine"
    clip_norm: float = 1.0
    schedule: str = "linear"
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class TrainingLog:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def append(self, step: int, loss: float):
        self.steps.append(int(step))
        self.losses.append(float(loss))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss"])
            for s, l in zip(self.steps, self.losses):
                w.writerow([s, repr(l)])


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_decay == "cosine" and cfg.steps > 0:
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))
    return cfg.lr


def train(data: FlowDataset, model: PolicyModel, cfg: TrainConfig | None = None,
          progress=None) -> tuple:
    """Fit ``model`` in place on a copy and return ``(trained_model, log)``.

    The log holds the running mean loss over each ``log_every`` window.

    Raises:
        TrainingDiverged: on the first non-finite loss.
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = model.copy()
    sched = get_schedule(cfg.schedule)
    opt = Adam(cfg.lr) if cfg.optimizer == "adam" else MomentumSGD(cfg.lr, cfg.momentum)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    log = TrainingLog()
    order, cursor = rng.permutation(len(data)), 0
    window = []
    last_finite = math.nan
    for step in range(1, cfg.steps + 1):
        if len(data) >= cfg.batch_size:
            if cursor + cfg.batch_size > len(order):
                order, cursor = rng.permutation(len(data)), 0
            idx = order[cursor:cursor + cfg.batch_size]
            cursor += cfg.batch_size
        else:
            idx = rng.integers(len(data), size=cfg.batch_size)
        loss_seed = int(rng.integers(2 ** 63))
        batch = data.take(idx)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            loss, grads = flow_loss(model, batch.x0, batch.feats, loss_seed, sched)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {step} (last finite {last_finite:.4g})")
        last_finite = loss
        if cfg.clip_norm > 0:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.clip_norm:
                grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
        lr = _lr_at(cfg, step - 1)
        if lr > 0:
            opt.step(model.params, grads, lr)
        window.append(loss)
        if step % cfg.log_every == 0 or step == cfg.steps:
            log.append(step, float(np.mean(window)))
            window = []
            if progress is not None:
                progress(step, log.losses[-1])
    return model.round_to_float32(), log


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
