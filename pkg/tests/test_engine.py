import numpy as np
import pytest

from bbbsim import (
    Configuration,
    DomainError,
    RngStream,
    RunManifest,
    apply_branch,
    barycenter,
    extent,
    kill_index,
    sample_interbranch,
    simulate,
)
from bbbsim.core import InitialCondition
from bbbsim.engine import observation_grid

from conftest import gen, random_rotation


def cfg(rows, capacity=None):
    pos = np.asarray(rows, dtype=float)
    if pos.ndim == 1:
        pos = pos.reshape(-1, 1)
    return Configuration(pos, capacity or pos.shape[0])


def manifest(**kw):
    base = dict(N=3, d=1, horizon=2.0, dt_obs=0.5, seed=123, replicas=1)
    base.update(kw)
    return RunManifest(**base)


def brute_kill(pos, parent):
    n = pos.shape[0]
    b = (pos.sum(axis=0) + pos[parent]) / (n + 1)
    dists = [float(np.linalg.norm(pos[j] - b)) for j in range(n)]
    best = 0
    for j in range(1, n):
        if dists[j] > dists[best]:
            best = j
    return best


class TestKillIndex:
    def test_single_particle(self):
        assert kill_index(cfg([[5.0]]), 0) == 0

    def test_two_particles(self):
        # b = 2/3; distances 2/3 and 4/3
        assert kill_index(cfg([0.0, 2.0]), 0) == 1

    def test_three_particles(self):
        # b = 5/4; distances 5/4, 1/4, 7/4
        assert kill_index(cfg([0.0, 1.0, 3.0]), 1) == 2

    def test_below_capacity_rejected(self):
        with pytest.raises(DomainError):
            kill_index(cfg([0.0, 1.0], capacity=3), 0)

    def test_matches_brute_force(self):
        g = gen(11)
        for _ in range(300):
            n = int(g.integers(1, 7))
            pos = g.normal(size=(n, int(g.integers(1, 4))))
            parent = int(g.integers(n))
            assert kill_index(cfg(pos), parent) == brute_kill(pos, parent)

    def test_isometry_equivariance(self):
        g = gen(12)
        for _ in range(100):
            pos = g.normal(size=(5, 3))
            parent = int(g.integers(5))
            k = kill_index(cfg(pos), parent)
            rot = random_rotation(3, g)
            shift = g.normal(size=3)
            assert kill_index(cfg(pos @ rot.T + shift), parent) == k


class TestApplyBranch:
    def test_growth_appends(self):
        out, ev = apply_branch(cfg([[5.0]], capacity=3), 0)
        assert out.positions.tolist() == [[5.0], [5.0]]
        assert ev.killed is None

    def test_capacity_two(self):
        out, ev = apply_branch(cfg([0.0, 2.0]), 0)
        assert out.positions.tolist() == [[0.0], [0.0]]
        assert ev.killed == 1

    def test_capacity_three(self):
        out, ev = apply_branch(cfg([0.0, 1.0, 3.0]), 1)
        assert out.positions.tolist() == [[0.0], [1.0], [1.0]]
        assert ev.killed == 2

    def test_barycenter_jump_identity(self):
        # jump = (x_parent - x_killed) / N, exactly
        g = gen(13)
        for _ in range(300):
            n = int(g.integers(2, 7))
            pos = g.normal(size=(n, int(g.integers(1, 4))))
            parent = int(g.integers(n))
            c = cfg(pos)
            out, ev = apply_branch(c, parent)
            jump = barycenter(out) - barycenter(c)
            ref = (pos[parent] - ev.killed_position) / n
            scale = 1.0 + np.abs(ref).max()
            assert np.abs(jump - ref).max() <= 1e-10 * scale

    def test_extent_never_increases_at_capacity(self):
        g = gen(14)
        for _ in range(200):
            pos = g.normal(size=(4, 2)) * 5
            c = cfg(pos)
            out, _ = apply_branch(c, int(g.integers(4)))
            assert extent(out) <= extent(c) + 1e-12


class TestInterbranch:
    def test_moment_oracle(self):
        rng = RngStream(77, 0)
        n = 100_000
        draws = np.array([sample_interbranch(rng, 4) for _ in range(n)])
        se = 0.25 / np.sqrt(n)
        assert abs(draws.mean() - 0.25) <= 3 * se

    def test_determinism(self):
        assert sample_interbranch(RngStream(3, 4), 2) == sample_interbranch(RngStream(3, 4), 2)

    def test_strictly_positive(self):
        rng = RngStream(5, 0)
        assert all(sample_interbranch(rng, 1) > 0 for _ in range(10_000))


class TestObservationGrid:
    def test_ends_at_horizon(self):
        g = observation_grid(1.0, 0.1)
        assert g[-1] == 1.0 and len(g) == 10

    def test_ragged_horizon(self):
        g = observation_grid(1.05, 0.1)
        assert g[-1] == 1.05 and len(g) == 11

    def test_zero_horizon(self):
        assert observation_grid(0.0, 0.1).size == 0


class TestSimulate:
    def test_zero_horizon(self):
        m = manifest(horizon=0.0, initial=InitialCondition(kind="explicit",
                                                           positions=[[0.0], [1.0], [2.0]]))
        traj = simulate(m, m.replica_stream(0))
        assert len(traj.observations) == 1
        assert traj.observations[0][0] == 0.0
        assert not traj.events
        assert traj.observations[0][1].positions.tolist() == [[0.0], [1.0], [2.0]]

    def test_observation_times_are_grid_plus_events(self):
        m = manifest(horizon=3.0, dt_obs=0.5)
        traj = simulate(m, m.replica_stream(0))
        times = traj.times()
        expected = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0} | {ev.time for ev in traj.events}
        assert set(np.round(times, 12)) == set(np.round(sorted(expected), 12))
        assert np.all(np.diff(times) >= 0)

    def test_determinism(self):
        m = manifest(seed=9)
        a = simulate(m, m.replica_stream(0))
        b = simulate(m, m.replica_stream(0))
        assert all(np.array_equal(x[1].positions, y[1].positions)
                   for x, y in zip(a.observations, b.observations))
        assert [e.time for e in a.events] == [e.time for e in b.events]

    def test_single_particle_is_brownian_motion(self):
        # endpoint variance over 1e4 replicas within 5% of the horizon
        horizon = 4.0
        m = manifest(N=1, horizon=horizon, dt_obs=horizon, replicas=10_000, seed=5)
        finals = np.array([
            simulate(m, m.replica_stream(r)).observations[-1][1].positions[0, 0]
            for r in range(m.replicas)
        ])
        assert abs(finals.var(ddof=1) - horizon) <= 0.05 * horizon

    def test_event_count_poisson_oracle(self):
        # at capacity the clock has rate N: mean count = N * horizon
        m = manifest(N=3, horizon=2.0, dt_obs=2.0, replicas=10_000, seed=6)
        counts = np.array([
            len(simulate(m, m.replica_stream(r)).events) for r in range(m.replicas)
        ])
        target = 3 * 2.0
        se = np.sqrt(target / m.replicas)
        assert abs(counts.mean() - target) <= 3 * se

    def test_growth_phase_count_monotone_to_capacity(self):
        m = manifest(N=4, horizon=6.0, dt_obs=0.25, seed=8,
                     initial=InitialCondition(kind="point", count=1))
        traj = simulate(m, m.replica_stream(0))
        ns = [c.n for _, c in traj.observations]
        reached = False
        for prev, cur in zip(ns, ns[1:]):
            if not reached:
                assert cur >= prev
            if cur == 4:
                reached = True
            if reached:
                assert cur == 4
        assert reached

    def test_extent_never_increases_across_capacity_events(self):
        m = manifest(N=4, d=2, horizon=4.0, dt_obs=0.5, seed=10,
                     initial=InitialCondition(kind="gaussian", scale=2.0))
        traj = simulate(m, m.replica_stream(0))
        obs = dict((round(t, 12), c) for t, c in traj.observations)
        # reconstruct the pre-event configuration from the post-event one
        for ev in traj.events:
            post = obs[round(ev.time, 12)]
            pre = post.positions.copy()
            pre[ev.killed] = ev.killed_position
            assert extent(post) <= extent(pre) + 1e-12

    def test_barycenter_jump_identity_on_simulated_events(self):
        m = manifest(N=3, d=2, horizon=3.0, dt_obs=0.5, seed=11,
                     initial=InitialCondition(kind="gaussian", scale=1.0))
        traj = simulate(m, m.replica_stream(0))
        obs = dict((round(t, 12), c) for t, c in traj.observations)
        for ev in traj.events:
            post = obs[round(ev.time, 12)]
            jump = barycenter(post) - ev.barycenter_before
            ref = (post.positions[ev.killed] - ev.killed_position) / 3
            scale = 1.0 + np.abs(ref).max()
            assert np.abs(jump - ref).max() <= 1e-10 * scale

    def test_conditioned_on_no_branching_is_gaussian(self):
        # given no events in [0, 2], X_i(t) ~ N(x_i, t I) independently
        from scipy import stats as sps
        x0 = [[0.0], [1.0]]
        m = manifest(N=2, horizon=2.0, dt_obs=1.5, replicas=20_000, seed=12,
                     initial=InitialCondition(kind="explicit", positions=x0))
        t = 1.5
        conditioned = []
        for r in range(m.replicas):
            traj = simulate(m, m.replica_stream(r))
            if not traj.events:
                conditioned.append(traj.config_at(t).positions[:, 0])
        conditioned = np.array(conditioned)
        assert conditioned.shape[0] > 150
        for i, xi in enumerate([0.0, 1.0]):
            _, p = sps.kstest(conditioned[:, i], "norm", args=(xi, np.sqrt(t)))
            assert p >= 0.01
        # independence across particles: correlation consistent with zero
        r12 = np.corrcoef(conditioned[:, 0], conditioned[:, 1])[0, 1]
        assert abs(r12) <= 3.5 / np.sqrt(conditioned.shape[0])
