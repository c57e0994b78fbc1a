"""Noise schedules for the flow-matching interpolant X_u = alpha(u) X0 + sigma(u) eps."""

from __future__ import annotations

import math

import numpy as np


class FlowSchedule:
    """Monotone interpolation weights: alpha falls 1 -> 0, sigma rises 0 -> 1."""

    name = "abstract"

    def alpha(self, u):
        raise NotImplementedError

    def sigma(self, u):
        raise NotImplementedError

    def dalpha(self, u):
        raise NotImplementedError

    def dsigma(self, u):
        raise NotImplementedError


class LinearSchedule(FlowSchedule):
    name = "linear"

    def alpha(self, u):
        return 1.0 - np.asarray(u, dtype=np.float64)

    def sigma(self, u):
        return np.asarray(u, dtype=np.float64) * 1.0

    def dalpha(self, u):
        return np.full(np.shape(u), -1.0)

    def dsigma(self, u):
        return np.full(np.shape(u), 1.0)


class CosineSchedule(FlowSchedule):
    name = "cosine"

    def alpha(self, u):
        u = np.asarray(u, dtype=np.float64)
        # pin the endpoints: cos(pi/2) is 6e-17, not 0
        return np.where(u == 1.0, 0.0, np.cos(0.5 * math.pi * u))

    def sigma(self, u):
        u = np.asarray(u, dtype=np.float64)
        return np.where(u == 1.0, 1.0, np.sin(0.5 * math.pi * u))

    def dalpha(self, u):
        return -0.5 * math.pi * np.sin(0.5 * math.pi * np.asarray(u, dtype=np.float64))

    def dsigma(self, u):
        return 0.5 * math.pi * np.cos(0.5 * math.pi * np.asarray(u, dtype=np.float64))


SCHEDULES = {"linear": LinearSchedule, "cosine": CosineSchedule}


def get_schedule(name: str) -> FlowSchedule:
    try:
        return SCHEDULES[name]()
    except KeyError:
        raise ValueError(f"unknown schedule {name!r}") from None


def _per_sample(coef, x):
    coef = np.asarray(coef, dtype=np.float64)
    return coef.reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def noise_trajectory(x0, u, eps, sched: FlowSchedule | None = None) -> np.ndarray:
    """Interpolate between clean trajectories and noise.

    ``u`` is a scalar or one value per leading-axis sample.
    """
    sched = sched or LinearSchedule()
    u = np.asarray(u, dtype=np.float64)
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError("flow time u must lie in [0, 1]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return _per_sample(sched.alpha(u), x0) * x0 + _per_sample(sched.sigma(u), x0) * eps


def target_velocity(x0, eps, sched: FlowSchedule | None = None, u=0.0) -> np.ndarray:
    """Time derivative of :func:`noise_trajectory`."""
    sched = sched or LinearSchedule()
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return _per_sample(sched.dalpha(u), x0) * x0 + _per_sample(sched.dsigma(u), x0) * eps
