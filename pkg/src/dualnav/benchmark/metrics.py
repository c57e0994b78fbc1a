"""Navigation metrics: NE, SR, OS, SPL, nDTW, TL and the human collision rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dualnav.flow.trajectory import arc_lengths, resample_polyline

D_SUCCESS = 3.0
D_STRICT = 1.0
STOPPED = "Stopped"


def navigation_error(final_xy, goal) -> float:
    return float(math.hypot(final_xy[0] - goal[0], final_xy[1] - goal[1]))


def success(terminal_cause: str, ne: float, d_success: float = D_SUCCESS) -> bool:
    return terminal_cause == STOPPED and ne < d_success


def oracle_success(positions, goal, d_success: float = D_SUCCESS) -> bool:
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    return bool(np.min(np.hypot(p[:, 0] - goal[0], p[:, 1] - goal[1])) < d_success)


def spl_terms(successes, shortest, actual) -> np.ndarray:
    s = np.asarray(successes, dtype=np.float64)
    l = np.asarray(shortest, dtype=np.float64)
    p = np.asarray(actual, dtype=np.float64)
    if np.any(l <= 0):
        raise ValueError("shortest-path lengths must be positive")
    return s * l / np.maximum(p, l)


def spl(successes, shortest, actual) -> float:
    return float(np.mean(spl_terms(successes, shortest, actual)))


def dtw(a, b) -> float:
    """Dynamic time warping cost under Euclidean ground distance."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("DTW needs non-empty paths")
    cost = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(actual, reference, d_th: float = D_SUCCESS) -> float:
    ref = np.asarray(reference, dtype=np.float64).reshape(-1, 2)
    return float(math.exp(-dtw(actual, ref) / (len(ref) * d_th)))


def path_length(positions) -> float:
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    return float(arc_lengths(p)[-1]) if len(p) > 1 else 0.0


def human_collision_rate(event_counts) -> float:
    """Fraction of episodes with at least one humanoid contact; nan for an empty suite."""
    c = np.asarray(list(event_counts))
    return float(np.mean(c > 0)) if len(c) else math.nan


@dataclass(frozen=True)
class EpisodeMetrics:
    id: str
    NE: float
    SR: bool
    OS: bool
    SPL: float
    nDTW: float
    TL: float
    HCR_event_count: int
    terminal_cause: str
    social: bool = False

    @property
    def strict_SR(self) -> bool:
        return success(self.terminal_cause, self.NE, D_STRICT)


def episode_metrics(trace, episode, d_success: float = D_SUCCESS, spacing: float = 0.25) -> EpisodeMetrics:
    """All per-episode metrics for one finished trace.

    For nDTW the executed path is re-spaced like the reference so that the
    30 Hz state log does not inflate the alignment cost.
    """
    pos = trace.positions
    ne = navigation_error(pos[-1], episode.goal)
    sr = success(trace.terminal_cause, ne, d_success)
    os_ = oracle_success(pos, episode.goal, d_success)
    tl = path_length(pos)
    ref = np.asarray(episode.gt_trajectory)
    s = float(spl_terms([sr], [episode.shortest_length], [tl])[0])
    nd = ndtw(resample_polyline(pos, spacing), ref, d_success)
    return EpisodeMetrics(episode.id, ne, sr, os_, s, nd, tl, trace.human_hits, trace.terminal_cause,
                          bool(episode.humanoids))


@dataclass(frozen=True)
class MetricsReport:
    n: int
    NE: float
    SR: float
    OS: float
    SPL: float
    nDTW: float
    TL: float
    HCR: float
    strict_SR: float

    @classmethod
    def aggregate(cls, rows) -> "MetricsReport":
        rows = list(rows)
        if not rows:
            raise ValueError("cannot aggregate an empty suite")
        social = [r.HCR_event_count for r in rows if r.social]
        mean = lambda f: float(np.mean([f(r) for r in rows]))
        return cls(len(rows), mean(lambda r: r.NE), mean(lambda r: r.SR), mean(lambda r: r.OS),
                   mean(lambda r: r.SPL), mean(lambda r: r.nDTW), mean(lambda r: r.TL),
                   human_collision_rate(social), mean(lambda r: r.strict_SR))

    def table(self) -> str:
        hcr = "n/a" if math.isnan(self.HCR) else f"{100 * self.HCR:.1f}"
        head = f"{'NE':>6} {'SR':>6} {'OS':>6} {'SPL':>6} {'nDTW':>6} {'TL':>6} {'HCR':>6} | {'SR@1m':>6}"
        body = (f"{self.NE:6.2f} {100 * self.SR:6.1f} {100 * self.OS:6.1f} {100 * self.SPL:6.1f} "
                f"{100 * self.nDTW:6.1f} {self.TL:6.2f} {hcr:>6} | {100 * self.strict_SR:6.1f}")
        return head + "\n" + body
