"""Embedded construction: the selection process inside a full branching system.

A dyadic branching Brownian population is simulated with full ancestry; a
vector I(t) of member indices embeds the selection process in it.  When the
member at slot i branches, the newborn (appended with the next free id) takes
over the slot of the member farthest from the (N+1)-particle barycenter, and
the displaced id keeps moving and branching in the background.  Detectors for
the regeneration events, the set of three-cluster configurations, and extent
hitting times live here because they need this ancestry information.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .core import Configuration, RngStream, RunManifest, _as_positions, barycenter, extent
from .engine import BranchEvent, Trajectory, observation_grid
from .errors import CoverageError, DomainError, ResourceLimitError

_TIME_ATOL = 1e-9


def ball_radius(N: int) -> float:
    """The radius 1/(4(N+1)) controlling every ball constraint."""
    return 1.0 / (4.0 * (N + 1))


def gamma_vector(N: int, d: int) -> NDArray[np.float64]:
    """Center of the middle cluster: 0 for N odd, -5/(N-1) e1 for N even."""
    g = np.zeros(d)
    if N % 2 == 0:
        g[0] = -5.0 / (N - 1)
    return g


def left_right_slots(N: int) -> tuple[range, range]:
    """0-based slot ranges of the left and right clusters (slot 0 excluded)."""
    c = (N + 1 + 1) // 2          # ceil((N+1)/2), 1-based boundary
    return range(1, c), range(c, N)


@dataclass
class BbmNode:
    """One particle line of the branching system.

    A node keeps its id across its own branch events (each branch only adds a
    newborn), so ``death`` is None unless the line was frozen by pruning.
    ``times``/``path`` sample the node's own trajectory at the recorded stops.
    """

    id: int
    parent: Optional[int]
    birth: float
    death: Optional[float] = None
    times: NDArray[np.float64] = field(default_factory=lambda: np.empty(0))
    path: NDArray[np.float64] = field(default_factory=lambda: np.empty((0, 1)))


@dataclass(frozen=True)
class EmbeddedBranchEvent:
    """A branch of a member line: slot bookkeeping for the embedded process."""

    time: float
    parent_slot: int
    killed_slot: Optional[int]       # None while below capacity
    old_id: Optional[int]            # displaced id (None during growth)
    new_id: int                      # always the next free id at the event


@dataclass
class LineageRecord:
    """Full ancestry record plus the embedded index vector."""

    manifest: RunManifest
    window: float
    nodes: list
    bbm_events: list                 # (time, parent_id, child_id)
    bbb_events: list                 # EmbeddedBranchEvent
    index_history: list              # (time, tuple of ids), right-continuous

    def index_at(self, t: float) -> tuple:
        """I(t): member ids at time t (post-event at event instants)."""
        out = self.index_history[0][1]
        for s, ids in self.index_history:
            if s <= t + _TIME_ATOL:
                out = ids
            else:
                break
        return out

    def node_position(self, node_id: int, t: float) -> NDArray[np.float64]:
        node = self.nodes[node_id]
        idx = np.searchsorted(node.times, t)
        for j in (idx, idx - 1, idx + 1):
            if 0 <= j < node.times.shape[0] and abs(node.times[j] - t) <= _TIME_ATOL:
                return node.path[j]
        raise CoverageError(f"node {node_id} has no sample at t={t}")

    def members_positions(self, t: float) -> NDArray[np.float64]:
        ids = self.index_at(t)
        return np.array([self.node_position(i, t) for i in ids])

    def ancestor_at(self, node_id: int, t: float) -> int:
        """Id of the time-t ancestor of the given node."""
        nid = node_id
        while self.nodes[nid].birth > t + _TIME_ATOL:
            parent = self.nodes[nid].parent
            if parent is None:
                break
            nid = parent
        return nid

    def population_at(self, t: float) -> int:
        return sum(1 for nd in self.nodes if nd.birth <= t + _TIME_ATOL)

    def embedded_trajectory(self) -> Trajectory:
        """Project the member slots onto an engine-style trajectory.

        Observations are taken at grid times and member branch times (post
        event), matching the first construction's recording convention.
        """
        grid = observation_grid(self.window, self.manifest.dt_obs)
        stop_set = {0.0}
        stop_set.update(float(g) for g in grid)
        stop_set.update(ev.time for ev in self.bbb_events)
        stops = sorted(stop_set)
        observations = []
        for s in stops:
            pos = self.members_positions(s)
            observations.append((s, Configuration(pos, self.manifest.N)))
        events = []
        for ev in self.bbb_events:
            pre_ids = self._pre_event_ids(ev)
            pre_pos = np.array([self.node_position(i, ev.time) for i in pre_ids])
            killed_pos = None
            if ev.killed_slot is not None:
                killed_pos = self.node_position(ev.old_id, ev.time)
            events.append(BranchEvent(
                ev.time, ev.parent_slot, ev.killed_slot,
                pre_pos.mean(axis=0), killed_pos,
            ))
        return Trajectory(self.manifest, tuple(observations), tuple(events))

    def _pre_event_ids(self, ev: EmbeddedBranchEvent) -> tuple:
        for s, ids in self.index_history:
            if abs(s - ev.time) <= _TIME_ATOL:
                post = list(ids)
                if ev.killed_slot is None:
                    return tuple(post[:-1])
                post[ev.killed_slot] = ev.old_id
                return tuple(post)
        raise CoverageError(f"no index-history entry at event time {ev.time}")

    # -- exports ----------------------------------------------------------
    def nodes_jsonl(self) -> str:
        lines = []
        for nd in self.nodes:
            lines.append(json.dumps({
                "id": nd.id, "parent": nd.parent,
                "birth": nd.birth, "death": nd.death,
            }))
        return "\n".join(lines) + "\n"

    def paths_csv(self) -> str:
        d = self.manifest.d
        rows = ["node_id,time," + ",".join(f"coord_{k}" for k in range(d))]
        for nd in self.nodes:
            for t, p in zip(nd.times, nd.path):
                rows.append(f"{nd.id},{t!r}," + ",".join(repr(float(v)) for v in p))
        return "\n".join(rows) + "\n"


def simulate_bbm_embedded(
    manifest: RunManifest,
    rng: RngStream,
    window: float,
    max_window: float = 10.0,
    max_nodes: int = 200_000,
    prune_dead_lines: bool = False,
) -> LineageRecord:
    """Simulate the full branching system with the embedded member vector.

    The population grows like n0*e^t, so ``window`` is capped (default 10).
    With ``prune_dead_lines`` the lines displaced from the member vector are
    frozen exactly one time unit after displacement (their recorded history up
    to that point is kept); this bounds memory while preserving everything the
    window-[t+1, t+2] detectors can ask about anchors up to the freeze times.
    Exceeding ``max_nodes`` raises ResourceLimitError and discards the record.
    """
    if window < 0:
        raise DomainError("window must be >= 0")
    if window > max_window:
        raise DomainError(f"window {window} exceeds cap {max_window}")
    N = manifest.N
    d = manifest.d
    pos0 = manifest.initial_positions(rng)
    n0 = pos0.shape[0]

    ids = list(range(n0))
    nodes = [BbmNode(i, None, 0.0, None, [], []) for i in ids]
    current = {i: pos0[i].copy() for i in ids}
    detached_at = {i: math.inf for i in ids}
    tracked = list(ids)
    members = list(ids)

    bbm_events: list = []
    bbb_events: list = []
    index_history = [(0.0, tuple(members))]
    freeze_queue: list = []          # ascending times; appended in time order
    fqi = 0

    grid = observation_grid(window, manifest.dt_obs)
    gi = 0
    t = 0.0

    def sample_all(s: float):
        for a in tracked:
            nodes[a].times.append(s)
            nodes[a].path.append(current[a].copy())

    def advance(h: float):
        if h <= 0.0:
            return
        s = math.sqrt(h)
        for a in tracked:
            current[a] += s * rng.normals(d)

    sample_all(0.0)
    ev_t = t + rng.exponential() / len(tracked) if window > 0 else math.inf

    while True:
        next_grid = grid[gi] if gi < len(grid) else math.inf
        next_freeze = freeze_queue[fqi] if fqi < len(freeze_queue) else math.inf
        stop = min(next_grid, next_freeze)
        if ev_t <= stop:
            if ev_t > window:
                break
            advance(ev_t - t)
            t = ev_t
            idx = int(rng.uniform() * len(tracked))
            a = tracked[idx]
            if len(nodes) >= max_nodes:
                raise ResourceLimitError(
                    f"population exceeded max_nodes={max_nodes} at t={t:.3f}"
                )
            child = len(nodes)
            nodes.append(BbmNode(child, a, t, None, [], []))
            current[child] = current[a].copy()
            bbm_events.append((t, a, child))
            if a in members:
                m = members.index(a)
                if len(members) < N:
                    members.append(child)
                    detached_at[child] = math.inf
                    bbb_events.append(EmbeddedBranchEvent(t, m, None, None, child))
                else:
                    stack = np.array([current[i] for i in members])
                    b = (stack.sum(axis=0) + current[a]) / (N + 1.0)
                    diff = stack - b
                    k = int(np.argmax((diff * diff).sum(axis=1)))
                    old = members[k]
                    members[k] = child
                    detached_at[child] = math.inf
                    detached_at[old] = t
                    if prune_dead_lines:
                        freeze_queue.append(t + 1.0)
                    bbb_events.append(EmbeddedBranchEvent(t, m, k, old, child))
                index_history.append((t, tuple(members)))
            else:
                detached_at[child] = detached_at[a]
            tracked.append(child)
            sample_all(t)
            ev_t = t + rng.exponential() / len(tracked)
        elif stop <= window:
            advance(stop - t)
            t = stop
            sample_all(t)
            if stop == next_grid:
                gi += 1
            if stop == next_freeze:
                fqi += 1
                kept = []
                for a in tracked:
                    if detached_at[a] + 1.0 <= t + _TIME_ATOL:
                        nodes[a].death = t
                    else:
                        kept.append(a)
                if len(kept) != len(tracked):
                    tracked = kept
                    # memoryless clock: redraw at the new total rate
                    ev_t = t + rng.exponential() / len(tracked)
        else:
            break

    for nd in nodes:
        nd.times = np.array(nd.times)
        nd.path = np.array(nd.path).reshape(len(nd.times), d)

    return LineageRecord(manifest, window, nodes, bbm_events, bbb_events, index_history)


# ---------------------------------------------------------------------------
# event detectors

@dataclass(frozen=True)
class EventReport:
    """Per-subevent flags for the two regeneration events at an anchor time.

    Unevaluated flags are None; the aggregates are the conjunction of the
    evaluated flags.
    """

    t: float
    a1: Optional[bool] = None
    a2: Optional[bool] = None
    a3: Optional[bool] = None
    b1: Optional[bool] = None
    b2: Optional[bool] = None

    @property
    def A_holds(self) -> Optional[bool]:
        flags = (self.a1, self.a2, self.a3)
        if any(f is None for f in flags):
            return None
        return all(flags)

    @property
    def B_holds(self) -> Optional[bool]:
        flags = (self.b1, self.b2)
        if any(f is None for f in flags):
            return None
        return all(flags)

    def merged(self, other: "EventReport") -> "EventReport":
        def pick(x, y):
            return y if x is None else x
        return EventReport(
            self.t,
            pick(self.a1, other.a1), pick(self.a2, other.a2), pick(self.a3, other.a3),
            pick(self.b1, other.b1), pick(self.b2, other.b2),
        )

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "A1": self.a1, "A2": self.a2, "A3": self.a3, "A": self.A_holds,
            "B1": self.b1, "B2": self.b2, "B": self.B_holds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def detect_A(traj: Trajectory, t: float) -> EventReport:
    """Evaluate the first regeneration event at anchor t.

    A1: no branch events during [t, t+1].  A2: relative to the time-t
    barycenter, the left-slot particles sit within r_N of -5e1 and the
    right-slot ones within r_N of +5e1 at time t+1.  A3: particle 0 sits
    within r_N of the parity-dependent center at time t+1.
    """
    N = traj.manifest.N
    if N < 3:
        raise DomainError("event detection needs N >= 3")
    if not (traj.has_time(t) and traj.has_time(t + 1.0)):
        raise CoverageError(f"trajectory does not cover [{t}, {t + 1}]")
    c_t = traj.config_at(t)
    c_t1 = traj.config_at(t + 1.0)
    if c_t.n != N or c_t1.n != N:
        raise DomainError("event detection needs a full population")

    a1 = not any(t - _TIME_ATOL <= ev.time <= t + 1.0 + _TIME_ATOL for ev in traj.events)

    b = barycenter(c_t)
    rel = c_t1.positions - b
    r_N = ball_radius(N)
    left, right = left_right_slots(N)
    e1 = np.zeros(traj.manifest.d)
    e1[0] = 5.0
    a2 = all(np.linalg.norm(rel[j] + e1) <= r_N for j in left) and all(
        np.linalg.norm(rel[j] - e1) <= r_N for j in right
    )
    gam = gamma_vector(N, traj.manifest.d)
    a3 = bool(np.linalg.norm(rel[0] - gam) <= r_N)
    return EventReport(t, a1=bool(a1), a2=bool(a2), a3=a3)


def detect_B(rec: LineageRecord, t: float) -> EventReport:
    """Evaluate the second regeneration event at anchor t on a lineage record.

    B1: the slot-0 member at time t+1 and its descendants branch at least N-1
    times during [t+1, t+2], and no other member's line branches there at all
    (the constraint applies to lines even after they leave the member vector).
    B2: every descendant of every time-(t+1) member stays within r_N of that
    member's time-(t+1) position at all recorded instants of the window.
    """
    N = rec.manifest.N
    if N < 3:
        raise DomainError("event detection needs N >= 3")
    if rec.window + _TIME_ATOL < t + 2.0:
        raise CoverageError(f"record window {rec.window} does not cover t+2={t + 2}")
    roots = rec.index_at(t + 1.0)
    anchors = [rec.node_position(rid, t + 1.0) for rid in roots]

    lo, hi = t + 1.0 - _TIME_ATOL, t + 2.0 + _TIME_ATOL
    counts = [0] * N
    root_of = {rid: j for j, rid in enumerate(roots)}
    for (s, parent_id, _child) in rec.bbm_events:
        if lo <= s <= hi:
            anc = rec.ancestor_at(parent_id, t + 1.0)
            j = root_of.get(anc)
            if j is not None:
                counts[j] += 1
    b1 = counts[0] >= N - 1 and all(c == 0 for c in counts[1:])

    r_N = ball_radius(N)
    b2 = True
    for nd in rec.nodes:
        if nd.birth > hi:
            continue
        anc = rec.ancestor_at(nd.id, t + 1.0)
        j = root_of.get(anc)
        if j is None:
            continue
        mask = (nd.times >= lo) & (nd.times <= hi)
        if not mask.any():
            continue
        dev = nd.path[mask] - anchors[j]
        if np.sqrt((dev * dev).sum(axis=1)).max() > r_N:
            b2 = False
            break
    return EventReport(t, b1=b1, b2=b2)


def in_S(c: Configuration):
    """Partition (G, C, D) witnessing the three-cluster shape, or None.

    The clusters are the closed balls of radius 2 r_N around -5e1, the
    parity-dependent center, and +5e1; the balls are disjoint, so the
    assignment is forced, and membership additionally needs a nonempty middle
    cluster and the two cardinality bounds.
    """
    pos = _as_positions(c)
    N = pos.shape[0]
    if isinstance(c, Configuration) and c.n != c.capacity:
        raise DomainError("set membership is defined for full configurations")
    d = pos.shape[1]
    r = 2.0 * ball_radius(N)
    gam = gamma_vector(N, d)
    e1 = np.zeros(d)
    e1[0] = 5.0

    G, C, D = [], [], []
    for i in range(N):
        if np.linalg.norm(pos[i] - gam) <= r:
            C.append(i)
        elif np.linalg.norm(pos[i] + e1) <= r:
            G.append(i)
        elif np.linalg.norm(pos[i] - e1) <= r:
            D.append(i)
        else:
            return None
    if not C:
        return None
    if len(G) + len(C) < (N - 1 + 1) // 2 + 1:     # ceil((N-1)/2) + 1
        return None
    if len(D) + len(C) < (N - 1) // 2 + 1:         # floor((N-1)/2) + 1
        return None
    return tuple(G), tuple(C), tuple(D)


def sample_s_configuration(N: int, d: int, rng: RngStream, require_sides: bool = True):
    """Random member of the three-cluster set; returns (positions, (G, C, D)).

    Cluster sizes are uniform over the admissible size triples (optionally
    requiring the side clusters to be jointly nonempty) and the positions are
    uniform in the respective balls.
    """
    lo_left = (N - 1 + 1) // 2 + 1
    lo_right = (N - 1) // 2 + 1
    triples = []
    for c in range(1, N + 1):
        for g in range(0, N - c + 1):
            dd = N - c - g
            if g + c >= lo_left and dd + c >= lo_right:
                if require_sides and g + dd == 0:
                    continue
                triples.append((g, c, dd))
    if not triples:
        raise DomainError(f"no admissible cluster sizes for N={N}")
    g, c, dd = triples[int(rng.uniform() * len(triples))]
    r = 2.0 * ball_radius(N)
    gam = gamma_vector(N, d)
    e1 = np.zeros(d)
    e1[0] = 5.0

    def ball_point(center):
        z = rng.normals(d)
        nrm = math.sqrt(float((z * z).sum()))
        if nrm == 0:
            nrm = 1.0
        return center + r * (rng.uniform() ** (1.0 / d)) * z / nrm

    pos = np.empty((N, d))
    slots = list(range(N))
    # shuffle slots so cluster membership is not tied to index order
    for i in range(N - 1, 0, -1):
        j = int(rng.uniform() * (i + 1))
        slots[i], slots[j] = slots[j], slots[i]
    Gs, Cs, Ds = sorted(slots[:g]), sorted(slots[g:g + c]), sorted(slots[g + c:])
    for i in Gs:
        pos[i] = ball_point(-e1)
    for i in Cs:
        pos[i] = ball_point(gam)
    for i in Ds:
        pos[i] = ball_point(e1)
    return pos, (tuple(Gs), tuple(Cs), tuple(Ds))


def first_extent_time(traj: Trajectory, L: float, from_one: bool = True) -> Optional[float]:
    """Earliest recorded time (>= 1, or >= 0) at which the extent is <= L.

    Searches grid and event instants; returns None when the horizon never
    reaches the target.  Event instants are recorded exactly, so only the
    diffusive interior is subject to grid resolution.
    """
    if not traj.observations:
        raise DomainError("empty trajectory")
    t_min = 1.0 if from_one else 0.0
    for s, cfg in traj.observations:
        if s >= t_min - _TIME_ATOL and extent(cfg) <= L:
            return float(s)
    return None


def record_to_replay(rec: LineageRecord):
    """Extract (initial, capacity, segments) driving engine.replay_simulate.

    Stops are the grid plus member branch times; each segment carries the
    member displacements up to the next stop (pre-event positions there) plus
    the branching slot when the stop is an event.
    """
    grid = observation_grid(rec.window, rec.manifest.dt_obs)
    ev_times = {ev.time: ev for ev in rec.bbb_events}
    stop_set = {0.0}
    stop_set.update(float(g) for g in grid)
    stop_set.update(ev_times.keys())
    stops = sorted(stop_set)
    initial = rec.members_positions(0.0)
    segments = []
    for s_prev, s_cur in zip(stops, stops[1:]):
        ids_prev = rec.index_at(s_prev)
        disp = np.array([
            rec.node_position(i, s_cur) - rec.node_position(i, s_prev)
            for i in ids_prev
        ])
        ev = ev_times.get(s_cur)
        segments.append((s_cur, disp, None if ev is None else ev.parent_slot))
    return initial, rec.manifest.N, segments
