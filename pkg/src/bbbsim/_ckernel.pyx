# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event-loop kernel.

Mirrors ``_pykernel.simulate_core`` draw for draw and in floating-point
evaluation order (sequential column sums and squared-distance loops, no FMA),
so both backends yield bit-identical trajectories from the same stream.
"""

from libc.math cimport sqrt, INFINITY

import numpy as np

BACKEND_NAME = "compiled"

ENDPOINT = 0
GRID = 1
FULL = 2


def simulate_core(pos0, int capacity, double horizon, grid_in, stream, int record_mode):
    """See _pykernel.simulate_core; identical contract and output."""
    cdef double[:, ::1] p0 = np.ascontiguousarray(pos0, dtype=np.float64)
    cdef double[::1] grid = np.ascontiguousarray(grid_in, dtype=np.float64)
    cdef int n = p0.shape[0]
    cdef int d = p0.shape[1]
    pos_arr = np.empty((capacity, d), dtype=np.float64)
    cdef double[:, ::1] pos = pos_arr
    cdef int j, k
    for j in range(n):
        for k in range(d):
            pos[j, k] = p0[j, k]

    obs_times = []
    obs_pos = []
    events = []

    if record_mode >= GRID:
        obs_times.append(0.0)
        obs_pos.append(pos_arr[:n].copy())

    # local draw-buffer state; refills go through the stream object
    cdef double[::1] nbuf = stream._norm_buf
    cdef Py_ssize_t npos = stream._norm_pos
    cdef double[::1] ebuf = stream._exp_buf
    cdef Py_ssize_t epos = stream._exp_pos
    cdef double[::1] ubuf = stream._uni_buf
    cdef Py_ssize_t upos = stream._uni_pos

    cdef double t = 0.0
    cdef Py_ssize_t gi = 0
    cdef Py_ssize_t G = grid.shape[0]
    cdef double ev_t, next_grid, h, s, u, s2, diff, best_d2, v
    cdef int parent, best
    cdef double[::1] colsum = np.empty(d, dtype=np.float64)
    cdef double[::1] bvec = np.empty(d, dtype=np.float64)

    if epos == ebuf.shape[0]:
        ebuf = stream._refill_exponentials()
        epos = 0
    ev_t = t + ebuf[epos] / n
    epos += 1

    while True:
        next_grid = grid[gi] if gi < G else INFINITY
        if ev_t <= next_grid:
            if ev_t > horizon:
                break
            h = ev_t - t
            if h > 0.0:
                s = sqrt(h)
                for j in range(n):
                    for k in range(d):
                        if npos == nbuf.shape[0]:
                            nbuf = stream._refill_normals()
                            npos = 0
                        pos[j, k] = pos[j, k] + s * nbuf[npos]
                        npos += 1
            t = ev_t
            if upos == ubuf.shape[0]:
                ubuf = stream._refill_uniforms()
                upos = 0
            u = ubuf[upos]
            upos += 1
            parent = <int>(u * n)

            for k in range(d):
                colsum[k] = 0.0
            for j in range(n):
                for k in range(d):
                    colsum[k] = colsum[k] + pos[j, k]
            bary_before = np.empty(d, dtype=np.float64)
            for k in range(d):
                bary_before[k] = colsum[k] / n

            if n < capacity:
                for k in range(d):
                    pos[n, k] = pos[parent, k]
                n += 1
                events.append((t, parent, -1, bary_before, None))
            else:
                for k in range(d):
                    bvec[k] = (colsum[k] + pos[parent, k]) / (n + 1)
                best = 0
                best_d2 = -1.0
                for j in range(n):
                    s2 = 0.0
                    for k in range(d):
                        diff = pos[j, k] - bvec[k]
                        s2 += diff * diff
                    if s2 > best_d2:
                        best_d2 = s2
                        best = j
                killed_position = pos_arr[best].copy()
                for k in range(d):
                    pos[best, k] = pos[parent, k]
                events.append((t, parent, best, bary_before, killed_position))
            if record_mode >= FULL:
                obs_times.append(t)
                obs_pos.append(pos_arr[:n].copy())
            if epos == ebuf.shape[0]:
                ebuf = stream._refill_exponentials()
                epos = 0
            ev_t = t + ebuf[epos] / n
            epos += 1
        else:
            h = next_grid - t
            if h > 0.0:
                s = sqrt(h)
                for j in range(n):
                    for k in range(d):
                        if npos == nbuf.shape[0]:
                            nbuf = stream._refill_normals()
                            npos = 0
                        pos[j, k] = pos[j, k] + s * nbuf[npos]
                        npos += 1
            t = next_grid
            gi += 1
            if record_mode >= GRID:
                obs_times.append(t)
                obs_pos.append(pos_arr[:n].copy())

    if record_mode == ENDPOINT:
        obs_times.append(horizon)
        obs_pos.append(pos_arr[:n].copy())

    # hand the buffer cursors back to the stream
    stream._norm_pos = npos
    stream._exp_pos = epos
    stream._uni_pos = upos

    return obs_times, obs_pos, events
