"""Pure-Python event-loop kernel.

This is the reference implementation of the hot loop; the compiled kernel in
``_ckernel.pyx`` mirrors it draw for draw and operation for operation, so both
backends produce bit-identical trajectories from the same stream.  Reductions
(column sums, squared distances) are written as explicit sequential loops to
pin the floating-point evaluation order.
"""

from __future__ import annotations

import math

BACKEND_NAME = "python"

# record modes
ENDPOINT = 0
GRID = 1
FULL = 2


def simulate_core(pos0, capacity, horizon, grid, stream, record_mode):
    """Run one replica of the event-driven process.

    Parameters
    ----------
    pos0 : (n0, d) float64 array
        Initial positions, 1 <= n0 <= capacity.
    capacity : int
        Population ceiling N; branching kills only at capacity.
    horizon : float
        End time (>= 0).
    grid : float64 array
        Ascending observation stops in (0, horizon], ending exactly at
        ``horizon`` (empty iff horizon == 0).
    stream : RngStream
        Randomness source (buffered; see core.RngStream).
    record_mode : int
        ENDPOINT, GRID, or FULL (grid plus post-event snapshots).

    Returns
    -------
    (obs_times, obs_pos, events) where obs_pos holds (n, d) copies and events
    is a list of (time, parent, killed, barycenter_before, killed_position)
    tuples with killed = -1 and killed_position = None during growth.
    """
    import numpy as np

    pos = np.empty((capacity, pos0.shape[1]), dtype=np.float64)
    n = pos0.shape[0]
    d = pos0.shape[1]
    pos[:n] = pos0

    obs_times = []
    obs_pos = []
    events = []

    if record_mode >= GRID:
        obs_times.append(0.0)
        obs_pos.append(pos[:n].copy())

    t = 0.0
    gi = 0
    G = len(grid)
    ev_t = t + stream.exponential() / n

    while True:
        next_grid = grid[gi] if gi < G else math.inf
        if ev_t <= next_grid:
            if ev_t > horizon:
                break
            h = ev_t - t
            if h > 0.0:
                s = math.sqrt(h)
                z = stream.normals(n * d).reshape(n, d)
                pos[:n] += s * z
            t = ev_t
            parent = int(stream.uniform() * n)

            # column sums, sequential over particles to pin fp order
            colsum = [0.0] * d
            for j in range(n):
                row = pos[j]
                for k in range(d):
                    colsum[k] += float(row[k])
            bary_before = np.array([colsum[k] / n for k in range(d)])

            if n < capacity:
                pos[n] = pos[parent]
                n += 1
                events.append((t, parent, -1, bary_before, None))
            else:
                b = [(colsum[k] + float(pos[parent, k])) / (n + 1) for k in range(d)]
                best = 0
                best_d2 = -1.0
                for j in range(n):
                    s2 = 0.0
                    row = pos[j]
                    for k in range(d):
                        diff = float(row[k]) - b[k]
                        s2 += diff * diff
                    if s2 > best_d2:
                        best_d2 = s2
                        best = j
                killed_position = pos[best].copy()
                pos[best] = pos[parent]
                events.append((t, parent, best, bary_before, killed_position))
            if record_mode >= FULL:
                obs_times.append(t)
                obs_pos.append(pos[:n].copy())
            ev_t = t + stream.exponential() / n
        else:
            h = next_grid - t
            if h > 0.0:
                s = math.sqrt(h)
                z = stream.normals(n * d).reshape(n, d)
                pos[:n] += s * z
            t = next_grid
            gi += 1
            if record_mode >= GRID:
                obs_times.append(t)
                obs_pos.append(pos[:n].copy())

    if record_mode == ENDPOINT:
        obs_times.append(horizon)
        obs_pos.append(pos[:n].copy())

    return obs_times, obs_pos, events
