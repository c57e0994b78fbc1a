"""Euler integration of the learned velocity field from noise to a trajectory."""

from __future__ import annotations

import numpy as np

from dualnav.flow.trajectory import N_WAYPOINTS, resample32


def sample_trajectory(model, cond, n_steps: int, seed) -> np.ndarray:
    """Integrate from ``u = 1`` (noise drawn from ``seed``) down to ``u = 0``.

    The result is re-spaced with :func:`resample32`; a trajectory that
    collapses onto the origin is returned as zeros rather than resampled.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    x = np.random.default_rng(seed).standard_normal((N_WAYPOINTS, 2))
    dt = 1.0 / n_steps
    for i in range(n_steps):
        u = 1.0 - i * dt
        x = x - dt * model.velocity(x, u, cond)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sampler state at u={u:.3f}")
    x = x * model.config.traj_scale
    try:
        return resample32(x)
    except ValueError:
        return np.zeros((N_WAYPOINTS, 2))
