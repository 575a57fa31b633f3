"""Deterministic weighted-configuration calculus.

Fixed positions carry nonnegative integer weights summing to N.  A branching
event at a positive-weight site increments that weight and decrements the
weight of the site farthest from the (N+1)-weighted barycenter; driving this
until a single site holds all the weight is a collapse.  Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .core import RngStream, _as_positions
from .errors import AmbiguousConfigurationError, DomainError

# Distance gaps below AMBIGUITY_RTOL * (1 + max |x_i|) count as ties.
AMBIGUITY_RTOL = 1e-9


def _tie_tolerance(x: NDArray[np.float64]) -> float:
    return AMBIGUITY_RTOL * (1.0 + float(np.sqrt((x * x).sum(axis=1).max())))


@dataclass(frozen=True)
class WeightedConfig:
    """Positions plus nonnegative integer weights summing to the capacity N."""

    positions: NDArray[np.float64]
    weights: NDArray[np.int64]

    def __post_init__(self):
        pos = _as_positions(self.positions)
        w = np.asarray(self.weights, dtype=np.int64)
        if w.shape != (pos.shape[0],):
            raise DomainError(f"weights shape {w.shape} does not match {pos.shape[0]} positions")
        if (w < 0).any():
            raise DomainError("weights must be nonnegative")
        if w.sum() != pos.shape[0]:
            raise DomainError(f"weights sum to {int(w.sum())}, want N={pos.shape[0]}")
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CollapseTrace:
    """Record of a collapse: branch sites, kill sites, and weight history.

    ``weights`` has length len(sequence)+1, starting at the input weights and
    ending at a vector with exactly one nonzero entry (equal to N).
    Indices are 0-based.
    """

    sequence: tuple
    kills: tuple
    weights: tuple

    @property
    def m(self) -> int:
        return len(self.sequence)

    def to_dict(self) -> dict:
        return {
            "sequence": [int(i) for i in self.sequence],
            "kills": [int(k) for k in self.kills],
            "weights": [[int(w) for w in row] for row in self.weights],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _select_kill_gap(x, w, ell):
    """Kill index for a branch at ``ell`` plus the gap to the runner-up.

    Returns (k, gap, runner_up); gap is +inf when only one site has positive
    weight.  Ties resolve to the lowest index, as in the stochastic engine.
    """
    b = (w @ x + x[ell]) / (x.shape[0] + 1.0)
    diff = x - b
    dist2 = (diff * diff).sum(axis=1)
    order = np.flatnonzero(w > 0)
    dists = np.sqrt(dist2[order])
    top = int(np.argmax(dists))
    k = int(order[top])
    if order.size == 1:
        return k, np.inf, k
    rest = np.delete(np.arange(order.size), top)
    second = rest[int(np.argmax(dists[rest]))]
    return k, float(dists[top] - dists[second]), int(order[second])


def select_kill(x, w, ell: int) -> int:
    """Index of the positive-weight particle farthest from the post-branch barycenter.

    The barycenter counts the newborn: b = (sum_i w_i x_i + x_ell) / (N+1).
    """
    x = _as_positions(x)
    w = np.asarray(w, dtype=np.int64)
    if not 0 <= ell < x.shape[0]:
        raise DomainError(f"branch site {ell} out of range")
    if w[ell] <= 0:
        raise DomainError(f"cannot branch at site {ell} with weight 0")
    k, _, _ = _select_kill_gap(x, w, ell)
    return k


def branch_update(x, w, ell: int) -> NDArray[np.int64]:
    """Weights after a branch at ``ell``: +1 at ell, -1 at the kill index."""
    x = _as_positions(x)
    w = np.asarray(w, dtype=np.int64)
    k = select_kill(x, w, ell)
    g = w.copy()
    g[ell] += 1
    g[k] -= 1
    return g


def _collapse_impl(x, w):
    x = _as_positions(x)
    w = np.asarray(w, dtype=np.int64).copy()
    N = x.shape[0]
    if w.shape != (N,) or (w < 0).any() or w.sum() != N:
        raise DomainError("weights must be nonnegative and sum to N")
    tol = _tie_tolerance(x)

    sequence: list[int] = []
    kills: list[int] = []
    history = [tuple(int(v) for v in w)]
    limit = (N - 1) ** 2
    min_gap = np.inf

    while int((w > 0).sum()) > 1:
        b0 = (w @ x) / float(N)
        diff = x - b0
        dist = np.sqrt((diff * diff).sum(axis=1))
        positive = np.flatnonzero(w > 0)
        order = np.argsort(dist[positive])
        ell = int(positive[order[0]])
        if positive.size >= 2:
            min_gap = min(min_gap, float(dist[positive[order[1]]] - dist[positive[order[0]]]))
        # One phase: branch at ell until a kill zeroes out a site.
        while True:
            k, gap, runner = _select_kill_gap(x, w, ell)
            if gap <= tol:
                raise AmbiguousConfigurationError(
                    (min(k, runner), max(k, runner)),
                    tuple(w + (np.arange(N) == ell)),
                )
            min_gap = min(min_gap, gap)
            if k == ell:
                raise RuntimeError(
                    "kill selected the branch site with other positive weights "
                    "present; this contradicts the collapse guarantees"
                )
            w[ell] += 1
            w[k] -= 1
            sequence.append(ell)
            kills.append(k)
            history.append(tuple(int(v) for v in w))
            if len(sequence) > limit:
                raise RuntimeError(f"collapse exceeded {limit} branchings")
            if w[k] == 0:
                break

    return CollapseTrace(tuple(sequence), tuple(kills), tuple(history)), float(min_gap)


def collapse(x, w) -> CollapseTrace:
    """Drive the weights to a single nonzero entry, phase by phase.

    Each phase fixes the branch site ``ell`` as the positive-weight particle
    closest to the current weighted barycenter, then branches at ``ell`` until
    a kill empties some site; the next phase recomputes the barycenter.  The
    total number of branchings is at most (N-1)^2.

    A tie in any kill selection (within the documented tolerance band) raises
    AmbiguousConfigurationError naming the tying pair and the weight vector in
    force at that step; tie detection is per encountered comparison rather
    than an a-priori margin gate (see unambiguity_margin for why the global
    margin is too strict a gate for odd N).
    """
    trace, _ = _collapse_impl(x, w)
    return trace


def collapse_margin(x, w) -> float:
    """Smallest distance gap encountered along the collapse of (x, w).

    This covers every comparison the collapse actually makes (each phase's
    choice of branch site and every kill selection), so it is the operative
    stability radius scale: perturbations below an eighth of it cannot change
    the trace.  It is never smaller than ``unambiguity_margin``, and stays
    positive for generic configurations of any N.
    """
    _, gap = _collapse_impl(x, w)
    return gap


def enumerate_compositions(N: int) -> NDArray[np.int64]:
    """All nonnegative integer N-vectors summing to N+1, in lexicographic order.

    There are C(2N, N-1) of them.
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    total = N + 1
    out = []
    vec = [0] * N

    def rec(i: int, remaining: int):
        if i == N - 1:
            vec[i] = remaining
            out.append(tuple(vec))
            return
        for v in range(remaining + 1):
            vec[i] = v
            rec(i + 1, remaining - v)

    rec(0, total)
    return np.array(out, dtype=np.int64)


def unambiguity_margin(x) -> float:
    """Largest delta for which the configuration is delta-unambiguous.

    Minimum over all weight vectors f >= 0 with sum f = N+1 and all pairs
    j < k of | |x_j - b_f| - |x_k - b_f| | with b_f = (sum_i f_i x_i)/(N+1).
    Returns 0 exactly when the configuration is ambiguous, and +inf for N = 1
    (no pairs can tie).

    Note: for odd N >= 3 this quantity is identically 0, because the weight
    vector putting (N+1)/2 on each of two sites places b_f at their midpoint
    and ties them.  Use ``collapse_margin`` for the gap that actually governs
    collapse stability.
    """
    x = _as_positions(x)
    N = x.shape[0]
    if N < 2:
        return np.inf
    F = enumerate_compositions(N).astype(np.float64)
    centers = F @ x / (N + 1.0)                      # (M, d)
    diff = x[None, :, :] - centers[:, None, :]       # (M, N, d)
    dists = np.sqrt((diff * diff).sum(axis=2))       # (M, N)
    margin = np.inf
    for j, k in combinations(range(N), 2):
        gap = np.abs(dists[:, j] - dists[:, k]).min()
        if gap < margin:
            margin = float(gap)
    return margin


def _perturb(x, radius: float, rng: RngStream) -> NDArray[np.float64]:
    """Independent uniform-in-ball perturbation of every position."""
    n, d = x.shape
    z = rng.normals(n * d).reshape(n, d)
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    norms[norms == 0] = 1.0
    u = np.array([rng.uniform() for _ in range(n)]).reshape(n, 1)
    return x + radius * (u ** (1.0 / d)) * z / norms


def neighborhood_stability(
    x,
    w,
    radius: float,
    samples: int = 1000,
    rng: Optional[RngStream] = None,
    check_margin: bool = True,
) -> bool:
    """True iff sampled perturbations of size < radius collapse identically.

    With ``check_margin`` (the default) the call requires collapse_margin(x, w)
    >= 8 * radius, the regime in which identical collapse sequences are
    guaranteed; disabling the check permits negative controls at larger radii,
    where a differing trace is expected.  A perturbed configuration whose
    collapse is rejected as ambiguous counts as differing.
    """
    x = _as_positions(x)
    if radius < 0:
        raise DomainError("radius must be >= 0")
    if check_margin:
        margin = collapse_margin(x, w)
        if margin < 8.0 * radius:
            raise DomainError(
                f"collapse margin {margin:.3g} < 8 * radius {8 * radius:.3g}; "
                "stability is only guaranteed within margin/8"
            )
    if radius == 0:
        return True
    if rng is None:
        rng = RngStream(0, 0)
    base = collapse(x, w)
    for _ in range(samples):
        y = _perturb(x, radius, rng)
        try:
            trace = collapse(y, w)
        except AmbiguousConfigurationError:
            return False
        if trace.sequence != base.sequence or trace.kills != base.kills:
            return False
    return True


def margins_csv_rows(configs: Sequence) -> list[tuple[int, float]]:
    """(config id, margin) rows for a batch of position arrays."""
    return [(i, unambiguity_margin(x)) for i, x in enumerate(configs)]
