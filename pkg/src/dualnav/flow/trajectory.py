"""Fixed-interval trajectory representation used as the policy's action space."""

from __future__ import annotations

import math

import numpy as np

N_WAYPOINTS = 32


def arc_lengths(points: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(points, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Points every ``spacing`` metres along a polyline, always keeping both ends."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 1:
        return points.copy()
    cum = arc_lengths(points)
    total = cum[-1]
    if total == 0:
        return points[:1].copy()
    n = int(math.floor(total / spacing + 1e-9))
    s = np.arange(n + 1) * spacing
    if total - s[-1] > 1e-6:
        s = np.append(s, total)
    else:
        s[-1] = total
    return interpolate(points, cum, s)


def interpolate(points: np.ndarray, cum: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])], axis=1)


def resample32(points) -> np.ndarray:
    """Resample a relative polyline to 32 equal-arc waypoints.

    The polyline is taken to start at the anchor origin; an origin vertex is
    prepended when the input does not already begin there.  Waypoint ``k``
    (0-based) sits at arc length ``(k + 1) * L / 32`` so the last one lands on
    the polyline end.

    Raises:
        ValueError: if the polyline has zero length.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) == 0 or not np.all(np.isfinite(points)):
        raise ValueError("polyline must be non-empty and finite")
    if np.hypot(*points[0]) > 1e-12:
        points = np.vstack([np.zeros((1, 2)), points])
    cum = arc_lengths(points)
    total = cum[-1]
    if total <= 1e-12:
        raise ValueError("cannot resample a zero-length polyline")
    s = total * np.arange(1, N_WAYPOINTS + 1) / N_WAYPOINTS
    out = interpolate(points, cum, s)
    out[-1] = points[-1]
    return out


def world_to_anchor(points, anchor) -> np.ndarray:
    """Express world-frame xy points in the anchor's body frame."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2) - np.array([anchor.x, anchor.y])
    c, s = math.cos(anchor.yaw), math.sin(anchor.yaw)
    return np.stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1]], axis=1)


def anchor_to_world(points, anchor) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(anchor.yaw), math.sin(anchor.yaw)
    return np.stack([c * p[:, 0] - s * p[:, 1] + anchor.x, s * p[:, 0] + c * p[:, 1] + anchor.y], axis=1)

