"""Compiled inner loops for the 2.5D ray caster.

Everything here works on plain float64 arrays so the kernels stay free of
Python objects.  ``heights`` is indexed ``[row, col]`` with row along +y and
col along +x; a zero height is free space.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _static_hit(heights, res, ox, oy, oz, dx, dy, dz):
    """Range to the first obstacle face along a unit ray, or inf.

    Rays that reach the floor first return inf: the floor terminates a ray
    but is not a depth surface.
    """
    rows, cols = heights.shape
    t_floor = -oz / dz if dz < 0.0 else math.inf
    s = math.hypot(dx, dy)
    if s < 1e-12:
        return math.inf

    j = int(math.floor(ox / res))
    i = int(math.floor(oy / res))
    if i < 0 or j < 0 or i >= rows or j >= cols:
        return math.inf

    if dx > 0.0:
        step_j = 1
        t_max_x = ((j + 1) * res - ox) / dx
        t_delta_x = res / dx
    elif dx < 0.0:
        step_j = -1
        t_max_x = (j * res - ox) / dx
        t_delta_x = -res / dx
    else:
        step_j = 0
        t_max_x = math.inf
        t_delta_x = math.inf
    if dy > 0.0:
        step_i = 1
        t_max_y = ((i + 1) * res - oy) / dy
        t_delta_y = res / dy
    elif dy < 0.0:
        step_i = -1
        t_max_y = (i * res - oy) / dy
        t_delta_y = -res / dy
    else:
        step_i = 0
        t_max_y = math.inf
        t_delta_y = math.inf

    t_in = 0.0
    first = True
    while True:
        t_out = min(t_max_x, t_max_y)
        if t_in > t_floor:
            return math.inf
        h = heights[i, j]
        # the origin cell is never tested: the camera cannot sit inside a box
        if not first and h > 0.0:
            z_in = oz + t_in * dz
            if z_in <= h:
                return t_in
            if dz < 0.0:
                t_top = (h - oz) / dz
                if t_top <= t_out and t_top <= t_floor:
                    return t_top
        first = False
        if t_max_x < t_max_y:
            j += step_j
            t_in = t_max_x
            t_max_x += t_delta_x
        else:
            i += step_i
            t_in = t_max_y
            t_max_y += t_delta_y
        if i < 0 or j < 0 or i >= rows or j >= cols:
            return math.inf


@njit(cache=True)
def _cylinder_hit(ox, oy, oz, dx, dy, dz, hx, hy, radius, height):
    """Range to a vertical cylinder standing on the floor, or inf."""
    ex = ox - hx
    ey = oy - hy
    c = ex * ex + ey * ey - radius * radius
    if c <= 0.0:
        return math.inf
    best = math.inf
    a = dx * dx + dy * dy
    if a > 1e-18:
        b = 2.0 * (ex * dx + ey * dy)
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            t1 = (-b - math.sqrt(disc)) / (2.0 * a)
            if t1 >= 0.0:
                z = oz + t1 * dz
                if 0.0 <= z <= height:
                    best = t1
    if oz > height and dz < 0.0:
        t_cap = (height - oz) / dz
        px = ex + t_cap * dx
        py = ey + t_cap * dy
        if px * px + py * py <= radius * radius and t_cap < best:
            best = t_cap
    return best


@njit(cache=True)
def cast_rays(heights, res, ox, oy, oz, dirs, humans, depth_out, human_out):
    """Cast every unit direction in ``dirs`` (N, 3) from one origin.

    ``humans`` is (M, 4): x, y, radius, height.
    """
    n = dirs.shape[0]
    for k in range(n):
        dx = dirs[k, 0]
        dy = dirs[k, 1]
        dz = dirs[k, 2]
        t_static = _static_hit(heights, res, ox, oy, oz, dx, dy, dz)
        t_human = math.inf
        for m in range(humans.shape[0]):
            t = _cylinder_hit(ox, oy, oz, dx, dy, dz,
                              humans[m, 0], humans[m, 1], humans[m, 2], humans[m, 3])
            if t < t_human:
                t_human = t
        if t_human < t_static:
            depth_out[k] = t_human
            human_out[k] = True
        else:
            depth_out[k] = t_static
            human_out[k] = False


@njit(cache=True)
def _ray_box_entry(px, py, dx, dy, x0, x1, y0, y1):
    # slab test against an open rectangle; returns entry t (may be negative) or inf
    t_lo = -math.inf
    t_hi = math.inf
    if abs(dx) < 1e-15:
        if px <= x0 or px >= x1:
            return math.inf, math.inf
    else:
        ta = (x0 - px) / dx
        tb = (x1 - px) / dx
        if ta > tb:
            ta, tb = tb, ta
        t_lo = max(t_lo, ta)
        t_hi = min(t_hi, tb)
    if abs(dy) < 1e-15:
        if py <= y0 or py >= y1:
            return math.inf, math.inf
    else:
        ta = (y0 - py) / dy
        tb = (y1 - py) / dy
        if ta > tb:
            ta, tb = tb, ta
        t_lo = max(t_lo, ta)
        t_hi = min(t_hi, tb)
    if t_lo >= t_hi:
        return math.inf, math.inf
    return t_lo, t_hi


@njit(cache=True)
def _ray_circle_entry(px, py, dx, dy, cx, cy, r):
    ex = px - cx
    ey = py - cy
    a = dx * dx + dy * dy
    b = 2.0 * (ex * dx + ey * dy)
    c = ex * ex + ey * ey - r * r
    disc = b * b - 4.0 * a * c
    if a < 1e-30 or disc <= 0.0:
        return math.inf, math.inf
    sq = math.sqrt(disc)
    return (-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)


@njit(cache=True)
def disc_sweep(blocked, res, px, py, dx, dy, length, radius):
    """Largest travel in [0, length] before a disc touches a blocked cell.

    ``(dx, dy)`` is a unit direction.  Cells outside the grid count as
    blocked.  A disc that already overlaps a cell may still move along
    directions that do not deepen the overlap.
    """
    rows, cols = blocked.shape
    reach = length + radius + res
    j0 = int(math.floor((min(px, px + dx * length) - reach) / res))
    j1 = int(math.floor((max(px, px + dx * length) + reach) / res))
    i0 = int(math.floor((min(py, py + dy * length) - reach) / res))
    i1 = int(math.floor((max(py, py + dy * length) + reach) / res))
    best = length
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            if 0 <= i < rows and 0 <= j < cols and not blocked[i, j]:
                continue
            x0 = j * res
            x1 = x0 + res
            y0 = i * res
            y1 = y0 + res
            # distance from the disc centre to this box, and its rate of change
            qx = min(max(px, x0), x1)
            qy = min(max(py, y0), y1)
            gx = px - qx
            gy = py - qy
            dist = math.hypot(gx, gy)
            if dist < radius:
                # overlapping already: allow only motion that separates
                if dist > 1e-12:
                    if gx * dx + gy * dy < 0.0:
                        best = 0.0
                else:
                    best = 0.0
                continue
            t_enter = math.inf
            ta, tb = _ray_box_entry(px, py, dx, dy, x0 - radius, x1 + radius, y0, y1)
            if tb > 0.0 and ta < t_enter:
                t_enter = ta
            ta, tb = _ray_box_entry(px, py, dx, dy, x0, x1, y0 - radius, y1 + radius)
            if tb > 0.0 and ta < t_enter:
                t_enter = ta
            for cxk in (x0, x1):
                for cyk in (y0, y1):
                    ta, tb = _ray_circle_entry(px, py, dx, dy, cxk, cyk, radius)
                    if tb > 0.0 and ta < t_enter:
                        t_enter = ta
            if t_enter < 0.0:
                t_enter = 0.0
            if t_enter < best:
                best = t_enter
    return best


def warmup():
    """Trigger compilation with tiny inputs."""
    h = np.zeros((2, 2))
    d = np.zeros((1, 3))
    d[0, 0] = 1.0
    cast_rays(h, 1.0, 0.5, 0.5, 0.5, d, np.zeros((0, 4)), np.zeros(1), np.zeros(1, dtype=np.bool_))
    disc_sweep(np.zeros((2, 2), dtype=np.bool_), 1.0, 0.5, 0.5, 1.0, 0.0, 0.1, 0.1)
