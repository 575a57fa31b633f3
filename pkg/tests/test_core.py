import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bbbsim import (
    Configuration,
    DomainError,
    RngStream,
    RunManifest,
    barycenter,
    brownian_increment,
    extent,
    recenter,
)
from bbbsim.core import InitialCondition

from conftest import gen, random_rotation


def cfg(rows, capacity=None):
    pos = np.asarray(rows, dtype=float)
    if pos.ndim == 1:
        pos = pos.reshape(-1, 1)
    return Configuration(pos, capacity or pos.shape[0])


class TestBarycenter:
    def test_midpoint(self):
        assert barycenter(cfg([[0.0], [2.0]])) == pytest.approx([1.0])

    def test_mean_2d(self):
        assert barycenter(cfg([[0, 0], [0, 0], [3, 3]])) == pytest.approx([1.0, 1.0])

    def test_direct_arithmetic(self):
        # oracle: plain sum / count
        pts = [0.0, 1.0, 3.0]
        assert barycenter(cfg(pts)) == pytest.approx([sum(pts) / len(pts)])

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            barycenter(np.empty((0, 1)))


class TestExtent:
    def test_single_particle(self):
        assert extent(cfg([[5.0]])) == 0.0

    def test_max_gap(self):
        assert extent(cfg([0.0, 1.0, 3.0])) == pytest.approx(3.0)

    def test_euclidean(self):
        assert extent(cfg([[0, 0], [3, 4]])) == pytest.approx(5.0)


class TestRecenter:
    def test_collapses_to_origin(self):
        out = recenter(cfg([1.0, 1.0]))
        assert np.allclose(out.positions, 0.0)

    def test_symmetric_shift(self):
        out = recenter(cfg([0.0, 2.0]))
        assert out.positions == pytest.approx(np.array([[-1.0], [1.0]]))

    def test_subtract_barycenter(self):
        out = recenter(cfg([0.0, 1.0, 3.0]))
        ref = np.array([[0.0], [1.0], [3.0]]) - 4.0 / 3.0
        assert out.positions == pytest.approx(ref)


finite_cloud = arrays(
    np.float64, st.tuples(st.integers(1, 6), st.integers(1, 3)),
    elements=st.floats(-1e6, 1e6, allow_nan=False),
)


@given(finite_cloud)
def test_recentered_barycenter_at_origin(pos):
    out = recenter(pos)
    tol = 1e-12 * (1.0 + np.abs(pos).max())
    assert np.abs(barycenter(out)).max() <= tol


@given(finite_cloud, st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_extent_isometry_invariant(pos, seed):
    g = gen(seed)
    shift = g.normal(size=pos.shape[1])
    rot = random_rotation(pos.shape[1], g)
    base = extent(pos)
    assert extent(pos + shift) == pytest.approx(base, rel=1e-9, abs=1e-7)
    assert extent(pos @ rot.T) == pytest.approx(base, rel=1e-9, abs=1e-7)


def test_extent_zero_iff_coincident():
    assert extent(np.array([[2.0, 3.0]] * 4)) == 0.0
    assert extent(np.array([[0.0], [1e-12]])) > 0.0


class TestBrownianIncrement:
    def test_zero_dt_is_identity(self, rng):
        c = cfg([[0.0, 1.0], [2.0, 3.0]])
        before = rng.counter
        out = brownian_increment(c, 0.0, rng)
        assert np.array_equal(out.positions, c.positions)
        assert rng.counter == before

    def test_negative_dt_rejected(self, rng):
        with pytest.raises(DomainError):
            brownian_increment(cfg([0.0]), -0.1, rng)

    def test_deterministic_given_state(self):
        a = brownian_increment(cfg([0.0, 1.0]), 0.5, RngStream(11, 3))
        b = brownian_increment(cfg([0.0, 1.0]), 0.5, RngStream(11, 3))
        assert np.array_equal(a.positions, b.positions)

    def test_variance_oracle(self):
        # 1e5 draws at dt = 0.25: sample variance within 3 SE of 0.25
        rng = RngStream(42, 0)
        n = 100_000
        c = Configuration(np.zeros((1, 1)), 1)
        draws = np.array([
            brownian_increment(c, 0.25, rng).positions[0, 0] for _ in range(2000)
        ])
        # batched version for the bulk of the sample
        z = rng.normals(n - 2000) * np.sqrt(0.25)
        draws = np.concatenate([draws, z])
        v = draws.var(ddof=1)
        se = 0.25 * np.sqrt(2.0 / (n - 1))
        assert abs(v - 0.25) <= 3 * se

    def test_barycenter_variance_dt_over_n(self):
        # barycenter of n particles gains variance dt/n per coordinate
        n, dt, reps = 4, 0.36, 20_000
        rng = RngStream(7, 1)
        c = Configuration(np.zeros((n, 1)), n)
        disp = np.array([
            barycenter(brownian_increment(c, dt, rng))[0] for _ in range(reps)
        ])
        target = dt / n
        se = target * np.sqrt(2.0 / (reps - 1))
        assert abs(disp.var(ddof=1) - target) <= 3 * se


class TestRngStream:
    def test_same_key_same_sequence(self):
        a, b = RngStream(5, 9), RngStream(5, 9)
        assert np.array_equal(a.normals(100), b.normals(100))
        assert a.exponential() == b.exponential()
        assert a.uniform() == b.uniform()

    def test_distinct_streams_differ(self):
        a, b = RngStream(5, 0), RngStream(5, 1)
        assert not np.array_equal(a.normals(32), b.normals(32))

    def test_counter_monotone(self):
        s = RngStream(0, 0)
        seen = [s.counter]
        s.normals(3)
        seen.append(s.counter)
        s.exponential()
        seen.append(s.counter)
        s.uniform()
        seen.append(s.counter)
        assert seen == sorted(seen) and seen[-1] == 5


class TestManifest:
    def test_json_roundtrip(self):
        m = RunManifest(N=3, d=2, horizon=5.0, dt_obs=0.1, seed=9, replicas=4,
                        initial=InitialCondition(kind="gaussian", scale=2.0))
        again = RunManifest.from_json(m.to_json())
        assert again == m
        assert again.hash() == m.hash()

    def test_validation(self):
        with pytest.raises(DomainError):
            RunManifest(N=0, d=1, horizon=1.0, dt_obs=0.1, seed=0)
        with pytest.raises(DomainError):
            RunManifest(N=1, d=1, horizon=1.0, dt_obs=0.0, seed=0)

    def test_explicit_initial_shorter_than_N(self):
        m = RunManifest(N=4, d=1, horizon=1.0, dt_obs=0.5, seed=0,
                        initial=InitialCondition(kind="explicit", positions=[[0.0], [1.0]]))
        pos = m.initial_positions(m.replica_stream(0))
        assert pos.shape == (2, 1)
