import itertools
import math

import numpy as np
import pytest

from bbbsim import (
    AmbiguousConfigurationError,
    DomainError,
    RngStream,
    branch_update,
    collapse,
    enumerate_compositions,
    neighborhood_stability,
    select_kill,
    unambiguity_margin,
)
from bbbsim.detcfg import collapse_margin

from conftest import gen, random_rotation

X013 = np.array([[0.0], [1.0], [3.0]])


def brute_select(x, w, ell):
    """Independent oracle: direct loop over positive-weight sites."""
    x = np.atleast_2d(x)
    N = x.shape[0]
    b = (sum(w[i] * x[i] for i in range(N)) + x[ell]) / (N + 1)
    best, best_d = None, -1.0
    for j in range(N):
        if w[j] > 0:
            dj = float(np.linalg.norm(x[j] - b))
            if dj > best_d:
                best, best_d = j, dj
    return best


def brute_compositions(N, total):
    """Independent oracle: itertools-based stars and bars."""
    out = []
    for cuts in itertools.combinations(range(total + N - 1), N - 1):
        prev, vec = -1, []
        for c in cuts:
            vec.append(c - prev - 1)
            prev = c
        vec.append(total + N - 1 - prev - 1)
        out.append(tuple(vec))
    return sorted(out)


def brute_margin(x):
    """Independent oracle: explicit loops over compositions and pairs."""
    x = np.atleast_2d(x)
    N = x.shape[0]
    if N < 2:
        return math.inf
    best = math.inf
    for f in brute_compositions(N, N + 1):
        b = sum(f[i] * x[i] for i in range(N)) / (N + 1)
        dists = [float(np.linalg.norm(x[j] - b)) for j in range(N)]
        for j in range(N):
            for k in range(j + 1, N):
                best = min(best, abs(dists[j] - dists[k]))
    return best


class TestSelectKill:
    def test_worked_example_all_ones(self):
        # b = 5/4; distances 5/4, 1/4, 7/4
        assert select_kill(X013, [1, 1, 1], 1) == 2

    def test_worked_example_120(self):
        # b = 3/4; positive-weight distances 3/4, 1/4
        assert select_kill(X013, [1, 2, 0], 1) == 0

    def test_sole_positive_site_forced(self):
        assert select_kill(X013, [0, 3, 0], 1) == 1

    def test_zero_weight_branch_rejected(self):
        with pytest.raises(DomainError):
            select_kill(X013, [1, 0, 2], 1)

    def test_matches_brute_force(self):
        g = gen(1)
        for _ in range(200):
            N = int(g.integers(2, 6))
            d = int(g.integers(1, 3))
            x = g.normal(size=(N, d))
            w = np.zeros(N, dtype=int)
            for _ in range(N):
                w[g.integers(N)] += 1
            positive = np.flatnonzero(w > 0)
            ell = int(g.choice(positive))
            assert select_kill(x, w, ell) == brute_select(x, w, ell)

    def test_affine_isometry_equivariance(self):
        g = gen(2)
        for _ in range(100):
            N, d = 4, 2
            x = g.normal(size=(N, d))
            w = np.array([1, 0, 2, 1])
            k0 = select_kill(x, w, 0)
            rot = random_rotation(d, g)
            shift = g.normal(size=d)
            assert select_kill(x @ rot.T + shift, w, 0) == k0


class TestBranchUpdate:
    def test_step_one(self):
        assert branch_update(X013, [1, 1, 1], 1).tolist() == [1, 2, 0]

    def test_step_two(self):
        assert branch_update(X013, [1, 2, 0], 1).tolist() == [0, 3, 0]

    def test_sole_site_unchanged(self):
        assert branch_update(X013, [0, 3, 0], 1).tolist() == [0, 3, 0]

    def test_sums_to_N(self):
        g = gen(3)
        for _ in range(50):
            x = g.normal(size=(4, 1))
            w = np.array([2, 1, 1, 0])
            assert branch_update(x, w, 0).sum() == 4


class TestCollapse:
    def test_worked_example(self):
        trace = collapse(X013, [1, 1, 1])
        assert trace.sequence == (1, 1)
        assert trace.kills == (2, 0)
        assert trace.weights[-1] == (0, 3, 0)
        assert trace.m == 2 <= 4

    def test_already_collapsed(self):
        trace = collapse(X013, [0, 3, 0])
        assert trace.m == 0

    def test_ambiguous_rejected_with_diagnostic(self):
        x = np.array([[-1.0], [0.0], [1.0]])
        with pytest.raises(AmbiguousConfigurationError) as err:
            collapse(x, [1, 1, 1])
        assert err.value.pair == (0, 2)
        assert sum(err.value.weights) == 4

    def test_exhaustive_n3(self):
        # random x, all valid w: m <= (N-1)^2 with one survivor (ties have
        # probability zero for continuous positions)
        g = gen(4)
        ws = [w for w in itertools.product(range(4), repeat=3) if sum(w) == 3]
        ran = 0
        for _ in range(60):
            x = g.normal(size=(3, 1)) * 3.0
            for w in ws:
                trace = collapse(x, list(w))
                assert trace.m <= 4
                final = np.array(trace.weights[-1])
                assert (final > 0).sum() == 1 and final.sum() == 3
                ran += 1
        assert ran == 60 * len(ws)

    def test_close_and_safe_branching_along_traces(self):
        # the kill never hits the branch site while another site is positive
        g = gen(5)
        for _ in range(100):
            N = int(g.integers(3, 6))
            x = g.normal(size=(N, int(g.integers(1, 3)))) * 2.0
            trace = collapse(x, [1] * N)
            for step, (ell, k) in enumerate(zip(trace.sequence, trace.kills)):
                w_before = np.array(trace.weights[step])
                if (w_before > 0).sum() >= 2:
                    assert k != ell


def test_close_branching_direct():
    # ell = argmin distance to the weighted barycenter => kill != ell
    g = gen(6)
    for _ in range(300):
        N = int(g.integers(2, 7))
        d = int(g.integers(1, 4))
        x = g.normal(size=(N, d))
        w = np.zeros(N, dtype=int)
        for _ in range(N):
            w[g.integers(N)] += 1
        positive = np.flatnonzero(w > 0)
        if positive.size < 2:
            continue
        b0 = (w @ x) / N
        ell = int(positive[np.argmin(np.linalg.norm(x[positive] - b0, axis=1))])
        assert select_kill(x, w, ell) != ell


def test_safe_branching_direct():
    # after a kill leaving w*_k >= 1 with k != ell, the next kill is again != ell
    g = gen(7)
    checked = 0
    for _ in range(500):
        N = int(g.integers(3, 7))
        x = g.normal(size=(N, 1)) * 2.0
        w = np.zeros(N, dtype=int)
        for _ in range(N):
            w[g.integers(N)] += 1
        positive = np.flatnonzero(w > 0)
        if positive.size < 2:
            continue
        b0 = (w @ x) / N
        ell = int(positive[np.argmin(np.linalg.norm(x[positive] - b0, axis=1))])
        k = select_kill(x, w, ell)
        w_star = w.copy()
        w_star[ell] += 1
        w_star[k] -= 1
        if k != ell and w_star[k] >= 1:
            assert select_kill(x, w_star, ell) != ell
            checked += 1
    assert checked > 50


class TestCompositions:
    def test_n1(self):
        assert enumerate_compositions(1).tolist() == [[2]]

    def test_n2_lexicographic(self):
        assert enumerate_compositions(2).tolist() == [[0, 3], [1, 2], [2, 1], [3, 0]]

    def test_n3_count(self):
        assert enumerate_compositions(3).shape[0] == 15

    @pytest.mark.parametrize("N", range(1, 9))
    def test_count_closed_form(self, N):
        assert enumerate_compositions(N).shape[0] == math.comb(2 * N, N - 1)

    def test_matches_brute(self):
        ours = [tuple(r) for r in enumerate_compositions(4)]
        assert ours == brute_compositions(4, 5)
        assert len(set(ours)) == len(ours)


class TestMargin:
    def test_symmetric_config_margin_zero(self):
        assert unambiguity_margin(np.array([[-1.0], [0.0], [1.0]])) == 0.0

    def test_two_particle_margin(self):
        assert unambiguity_margin(np.array([[0.0], [1.0]])) == pytest.approx(1.0 / 3.0)

    def test_coincident_particles(self):
        assert unambiguity_margin(np.array([[2.0], [2.0], [5.0]])) == pytest.approx(0.0)

    def test_single_particle_convention(self):
        assert unambiguity_margin(np.array([[7.0]])) == math.inf

    def test_brute_force_equivalence(self):
        g = gen(8)
        for _ in range(50):
            N = int(g.integers(2, 5))
            d = int(g.integers(1, 3))
            x = g.normal(size=(N, d))
            assert unambiguity_margin(x) == pytest.approx(brute_margin(x), abs=1e-12)

    def test_isometry_invariance_and_homogeneity(self):
        g = gen(9)
        x = g.normal(size=(4, 2))
        m = unambiguity_margin(x)
        rot = random_rotation(2, g)
        shift = g.normal(size=2)
        assert unambiguity_margin(x @ rot.T + shift) == pytest.approx(m, rel=1e-9)
        assert unambiguity_margin(2.5 * x) == pytest.approx(2.5 * m, rel=1e-12)


def test_margin_degenerate_for_odd_N():
    # the composition with (N+1)/2 on two sites ties them for every odd N >= 3
    g = gen(10)
    for N in (3, 5):
        x = g.normal(size=(N, 2))
        assert unambiguity_margin(x) == pytest.approx(0.0, abs=1e-12)


class TestNeighborhoodStability:
    # the all-f margin is identically 0 for N = 3 (see above), so stability
    # preconditions run off the gaps the collapse actually encounters
    X = np.array([[0.0], [1.0], [3.0]])

    def test_zero_radius(self):
        assert neighborhood_stability(self.X, [1, 1, 1], 0.0)

    def test_stable_within_margin_over_8(self):
        margin = collapse_margin(self.X, [1, 1, 1])
        assert margin > 0
        radius = margin / 8.0 * 0.95
        assert neighborhood_stability(self.X, [1, 1, 1], radius, samples=300,
                                      rng=RngStream(1, 0))

    def test_negative_control_large_radius(self):
        margin = collapse_margin(self.X, [1, 1, 1])
        assert not neighborhood_stability(
            self.X, [1, 1, 1], 10.0 * margin, samples=500,
            rng=RngStream(2, 0), check_margin=False,
        )

    def test_margin_precondition_enforced(self):
        margin = collapse_margin(self.X, [1, 1, 1])
        with pytest.raises(DomainError):
            neighborhood_stability(self.X, [1, 1, 1], margin, samples=10)
