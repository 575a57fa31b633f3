"""Exact event-driven simulation of the selection process.

Branch times come from an exponential clock at rate n (one unit-rate clock per
particle), the branching particle is uniform, and at capacity the particle
farthest from the (N+1)-particle barycenter (newborn included) is replaced by
a copy of the parent.  Between recorded instants the particles advance by a
single Gaussian displacement with the exact law for the elapsed duration, so
the dynamics carry no time-discretization error; the observation grid only
chooses where the path is sampled.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from ._backend import kernel
from .core import Configuration, Point, RngStream, RunManifest, _as_positions
from .errors import DomainError

RECORD_ENDPOINT = 0
RECORD_GRID = 1
RECORD_FULL = 2


@dataclass(frozen=True)
class BranchEvent:
    """One branching event.

    ``killed`` is None while the population is below capacity (the newborn is
    appended instead).  ``barycenter_before`` is the pre-branch barycenter of
    the population; ``killed_position`` keeps the displaced particle's
    position for audit checks.  Indices are 0-based.
    """

    time: float
    parent: int
    killed: Optional[int]
    barycenter_before: Point
    killed_position: Optional[Point] = None


@dataclass(frozen=True)
class Trajectory:
    """Observations on the manifest grid plus all event instants."""

    manifest: RunManifest
    observations: tuple          # ((time, Configuration), ...)
    events: tuple                # (BranchEvent, ...)

    def times(self) -> NDArray[np.float64]:
        return np.array([t for t, _ in self.observations])

    def config_at(self, t: float, atol: float = 1e-9) -> Configuration:
        for s, c in self.observations:
            if abs(s - t) <= atol:
                return c
        raise DomainError(f"no observation at t={t}")

    def has_time(self, t: float, atol: float = 1e-9) -> bool:
        return any(abs(s - t) <= atol for s, _ in self.observations)


def kill_index(c: Configuration, parent: int) -> int:
    """Index killed when ``parent`` branches in a capacity configuration.

    argmax over j of |x_j - b| with b = (x_parent + sum_l x_l)/(N+1); exact
    floating-point comparison of squared distances, ties to the lowest index.
    """
    pos = _as_positions(c)
    n = pos.shape[0]
    if isinstance(c, Configuration) and c.n < c.capacity:
        raise DomainError("no killing below capacity")
    if not 0 <= parent < n:
        raise DomainError(f"parent index {parent} out of range")
    b = (pos.sum(axis=0) + pos[parent]) / (n + 1.0)
    diff = pos - b
    d2 = (diff * diff).sum(axis=1)
    return int(np.argmax(d2))


def apply_branch(c: Configuration, parent: int, t: float = 0.0):
    """Apply one branching event; returns (new configuration, event).

    Below capacity the newborn (a copy of the parent's position) is appended;
    at capacity the kill_index slot jumps to the parent's position.
    """
    if not 0 <= parent < c.n:
        raise DomainError(f"parent index {parent} out of range")
    pos = c.positions
    bary = pos.mean(axis=0)
    if c.n < c.capacity:
        out = np.vstack([pos, pos[parent]])
        ev = BranchEvent(t, parent, None, bary, None)
    else:
        k = kill_index(c, parent)
        out = pos.copy()
        killed_position = pos[k].copy()
        out[k] = pos[parent]
        ev = BranchEvent(t, parent, k, bary, killed_position)
    return Configuration(out, c.capacity), ev


def sample_interbranch(rng: RngStream, n: int) -> float:
    """Exponential waiting time at rate n (one unit-rate clock per particle)."""
    if n < 1:
        raise DomainError("need at least one particle")
    return rng.exponential() / n


def observation_grid(horizon: float, dt_obs: float) -> NDArray[np.float64]:
    """Stops in (0, horizon]: multiples of dt_obs, always ending at horizon."""
    if horizon <= 0:
        return np.empty(0)
    nsteps = int(np.floor(horizon / dt_obs + 1e-9))
    pts = dt_obs * np.arange(1, nsteps + 1)
    pts = pts[pts <= horizon]
    if pts.size == 0 or pts[-1] < horizon:
        pts = np.append(pts, horizon)
    return pts


def simulate(manifest: RunManifest, rng: RngStream, record: int = RECORD_FULL) -> Trajectory:
    """Exact simulation of one replica.

    Observations are recorded at every grid time and (in full mode) at every
    event instant, holding the post-event configuration; there is no
    discretization error in the dynamics themselves.
    """
    pos0 = manifest.initial_positions(rng)
    grid = observation_grid(manifest.horizon, manifest.dt_obs)
    obs_times, obs_pos, raw_events = kernel().simulate_core(
        pos0, manifest.N, manifest.horizon, grid, rng, record
    )
    observations = tuple(
        (float(t), Configuration(p, manifest.N)) for t, p in zip(obs_times, obs_pos)
    )
    events = tuple(
        BranchEvent(
            float(t), int(parent),
            None if killed < 0 else int(killed),
            np.asarray(bary), None if kp is None else np.asarray(kp),
        )
        for t, parent, killed, bary, kp in raw_events
    )
    return Trajectory(manifest, observations, events)


def replay_simulate(initial, capacity: int, segments: Sequence) -> tuple:
    """Re-run the selection logic against externally supplied randomness.

    ``segments`` is a list of (time, displacements, parent) triples in
    increasing time order: ``displacements`` is an (n, d) array advancing the
    n current particles to the segment's end time, and ``parent`` is the
    0-based branching slot, or None for a pure observation stop.  Returns
    (observations, events) in the same shapes as ``simulate``; used to check
    that two independently coded constructions agree pathwise under shared
    randomness.
    """
    pos = _as_positions(initial).copy()
    observations = [(0.0, Configuration(pos.copy(), capacity))]
    events = []
    for t, disp, parent in segments:
        disp = np.asarray(disp, dtype=np.float64)
        if disp.shape != pos.shape:
            raise DomainError(
                f"displacement shape {disp.shape} does not match state {pos.shape}"
            )
        pos = pos + disp
        if parent is not None:
            cfg, ev = apply_branch(Configuration(pos, capacity), int(parent), t)
            pos = np.array(cfg.positions)
            events.append(ev)
        observations.append((float(t), Configuration(pos.copy(), capacity)))
    return tuple(observations), tuple(events)


# ---------------------------------------------------------------------------
# exports

def trajectory_csv(traj: Trajectory, replica: int = 0) -> str:
    """CSV with columns replica,time,particle_index,coord_0..coord_{d-1}."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = traj.manifest.d
    w.writerow(["replica", "time", "particle_index"] + [f"coord_{k}" for k in range(d)])
    for t, cfg in traj.observations:
        for j in range(cfg.n):
            w.writerow([replica, repr(float(t)), j] + [repr(float(v)) for v in cfg.positions[j]])
    return buf.getvalue()


def events_csv(traj: Trajectory, replica: int = 0) -> str:
    """CSV with columns replica,time,parent,killed (killed empty during growth)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica", "time", "parent", "killed"])
    for ev in traj.events:
        w.writerow([replica, repr(float(ev.time)), ev.parent,
                    "" if ev.killed is None else ev.killed])
    return buf.getvalue()


def trajectory_jsonl(traj: Trajectory, replica: int = 0) -> str:
    """One JSON record per observation."""
    lines = []
    for t, cfg in traj.observations:
        lines.append(json.dumps({
            "replica": replica,
            "time": float(t),
            "positions": [[float(v) for v in row] for row in cfg.positions],
        }))
    return "\n".join(lines) + "\n"


def trajectory_from_csv(text: str, events_text: Optional[str], manifest: RunManifest,
                        replica: int = 0) -> Trajectory:
    """Rebuild one replica's trajectory from exported CSV text.

    Accepts the files written by ``bbb simulate`` (comment lines ignored).
    Event rows only carry (time, parent, killed), which is enough for the
    first-event detector; audit fields are filled with NaN.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    header, rows = rows[0], rows[1:]
    d = len(header) - 3
    by_time: dict = {}
    for r in rows:
        if int(r[0]) != replica:
            continue
        by_time.setdefault(float(r[1]), []).append((int(r[2]), [float(v) for v in r[3:]]))
    observations = []
    for t in sorted(by_time):
        parts = sorted(by_time[t])
        pos = np.array([p for _, p in parts]).reshape(len(parts), d)
        observations.append((t, Configuration(pos, manifest.N)))
    events = []
    if events_text:
        erows = [r for r in csv.reader(io.StringIO(events_text))
                 if r and not r[0].startswith("#")][1:]
        for r in erows:
            if int(r[0]) != replica:
                continue
            killed = None if r[3] == "" else int(r[3])
            events.append(BranchEvent(float(r[1]), int(r[2]), killed,
                                      np.full(d, np.nan), None))
    return Trajectory(manifest, tuple(observations), tuple(events))
