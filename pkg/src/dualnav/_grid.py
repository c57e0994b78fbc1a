"""Compiled breadth-first search over 4-connected grids."""

import numpy as np
from numba import njit


@njit(cache=True)
def bfs(traversable, gi, gj):
    rows, cols = traversable.shape
    dist = np.full((rows, cols), np.inf)
    if not traversable[gi, gj]:
        return dist
    qi = np.empty(rows * cols, dtype=np.int64)
    qj = np.empty(rows * cols, dtype=np.int64)
    head, tail = 0, 1
    qi[0], qj[0] = gi, gj
    dist[gi, gj] = 0.0
    di = (-1, 1, 0, 0)
    dj = (0, 0, -1, 1)
    while head < tail:
        i, j = qi[head], qj[head]
        head += 1
        d = dist[i, j] + 1.0
        for k in range(4):
            ni, nj = i + di[k], j + dj[k]
            if 0 <= ni < rows and 0 <= nj < cols and traversable[ni, nj] and dist[ni, nj] > d:
                dist[ni, nj] = d
                qi[tail], qj[tail] = ni, nj
                tail += 1
    return dist
