import math

import numpy as np
import pytest
from scipy.linalg import expm, null_space

from chr2comm.errors import InvalidStep, NegativeIntensity, NegativeRate, NonUniqueStationary
from chr2comm.kinetics import (
    RateParams,
    build_rate_matrix,
    discretize_euler,
    discretize_exact,
    euler_step_limit,
    recurrent_classes,
    steady_state,
)

PARAMS = RateParams()


class TestRateMatrix:
    def test_reference_values_at_one_lumen(self):
        q = build_rate_matrix(PARAMS, 1.0).q
        expected = np.array([[-5000.0, 5000.0, 0.0], [0.0, -50.0, 50.0], [17.0, 0.0, -17.0]])
        np.testing.assert_array_equal(q, expected)

    def test_dark_input_removes_sensitive_rate(self):
        q = build_rate_matrix(PARAMS, 0.0).q
        np.testing.assert_array_equal(q[0], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(q[1], [0.0, -50.0, 50.0])
        np.testing.assert_array_equal(q[2], [17.0, 0.0, -17.0])

    def test_opening_rate_linear_in_intensity(self):
        q = build_rate_matrix(PARAMS, 0.5).q
        np.testing.assert_array_equal(q[0], [-2500.0, 2500.0, 0.0])

    def test_rows_sum_to_zero_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = RateParams(*rng.uniform(0, 1e4, size=3))
            q = build_rate_matrix(p, rng.uniform(0, 5)).q
            assert np.abs(q.sum(axis=1)).max() <= 1e-15

    def test_forbidden_transitions_are_zero(self):
        q = build_rate_matrix(PARAMS, 2.0).q
        assert q[0, 2] == 0.0 and q[1, 0] == 0.0 and q[2, 1] == 0.0

    def test_negative_intensity_rejected(self):
        with pytest.raises(NegativeIntensity):
            build_rate_matrix(PARAMS, -0.1)

    def test_negative_rate_rejected(self):
        with pytest.raises(NegativeRate):
            RateParams(q23=-1.0)
        with pytest.raises(NegativeRate):
            RateParams(q12_per_lumen=math.nan)


class TestEuler:
    def test_reference_entries_at_microsecond_step(self):
        tm = discretize_euler(build_rate_matrix(PARAMS, 1.0), 1e-6)
        assert tm.p[0, 1] == pytest.approx(0.005, rel=1e-12)
        assert tm.p[1, 2] == pytest.approx(5e-5, rel=1e-12)
        assert tm.p[2, 0] == pytest.approx(1.7e-5, rel=1e-12)
        assert np.abs(tm.p.sum(axis=1) - 1.0).max() <= 1e-12

    def test_dark_closed_row_is_identity(self):
        tm = discretize_euler(build_rate_matrix(PARAMS, 0.0), 1e-3)
        np.testing.assert_array_equal(tm.p[0], [1.0, 0.0, 0.0])

    def test_large_step_rejected(self):
        rm = build_rate_matrix(PARAMS, 1.0)
        with pytest.raises(InvalidStep, match="validity bound"):
            discretize_euler(rm, 3e-3)  # 5000 * 0.003 = 15 > 1

    def test_step_exactly_at_bound_accepted(self):
        rm = build_rate_matrix(PARAMS, 1.0)
        tm = discretize_euler(rm, euler_step_limit(rm))
        assert tm.p[0, 0] == 0.0 and tm.p[0, 1] == 1.0

    def test_nonpositive_step_rejected(self):
        with pytest.raises(InvalidStep):
            discretize_euler(build_rate_matrix(PARAMS, 1.0), 0.0)


class TestExact:
    def test_short_step_near_identity(self):
        # deviation from I is bounded by max_rate * dt
        tm = discretize_exact(build_rate_matrix(PARAMS, 1.0), 1e-9)
        assert np.abs(tm.p - np.eye(3)).max() < 5000.0 * 1e-9 * 1.01
        tm = discretize_exact(build_rate_matrix(PARAMS, 0.1), 1e-9)
        assert np.abs(tm.p - np.eye(3)).max() < 1e-6

    def test_matches_scipy_expm(self):
        for x, dt in [(1.0, 1e-6), (1.0, 3e-3), (0.5, 1e-2), (0.0, 1.0), (1.0, 1.0)]:
            rm = build_rate_matrix(PARAMS, x)
            tm = discretize_exact(rm, dt)
            np.testing.assert_allclose(tm.p, expm(dt * rm.q), atol=5e-13)

    def test_agrees_with_euler_to_second_order(self):
        rm = build_rate_matrix(PARAMS, 1.0)
        dt = 1e-6
        diff = discretize_exact(rm, dt).p - discretize_euler(rm, dt).p
        second_order = 0.5 * dt * dt * (rm.q @ rm.q)
        assert np.abs(diff - second_order).max() < 1e-7

    def test_convergence_order_two(self):
        rm = build_rate_matrix(PARAMS, 1.0)
        gaps = []
        for dt in (1e-7, 1e-6, 1e-5):
            gaps.append(np.abs(discretize_exact(rm, dt).p - discretize_euler(rm, dt).p).max())
        for small, big in zip(gaps, gaps[1:]):
            assert 50.0 < big / small < 200.0  # ~dt**2 scaling across decades

    def test_dark_long_step_absorbs_into_closed(self):
        tm = discretize_exact(build_rate_matrix(PARAMS, 0.0), 1.0)
        np.testing.assert_array_equal(tm.p[0], [1.0, 0.0, 0.0])
        assert tm.p[2, 0] > 0.999  # D3 has all but e^-17 of its mass back in C1
        assert tm.p[2, 1] == 0.0  # O2 unreachable without light

    def test_rows_stochastic_across_regimes(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            rm = build_rate_matrix(RateParams(*rng.uniform(0, 8e3, 3)), rng.uniform(0, 3))
            p = discretize_exact(rm, 10 ** rng.uniform(-7, 0)).p
            assert p.min() >= 0.0
            assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12


class TestSteadyState:
    def test_dark_chain_rests_closed(self):
        tm = discretize_exact(build_rate_matrix(PARAMS, 0.0), 1e-3)
        np.testing.assert_allclose(steady_state(tm), [1.0, 0.0, 0.0], atol=1e-12)

    def test_flow_balance_oracle_at_one_lumen(self):
        # around the cycle pi_C1*q12 = pi_O2*q23 = pi_D3*q31, so pi ~ 1/rate
        tm = discretize_exact(build_rate_matrix(PARAMS, 1.0), 1e-5)
        pi = steady_state(tm)
        oracle = np.array([1 / 5000.0, 1 / 50.0, 1 / 17.0])
        oracle /= oracle.sum()
        np.testing.assert_allclose(pi, oracle, atol=1e-10)
        np.testing.assert_allclose(pi, [0.00253, 0.25309, 0.74438], atol=2e-5)

    def test_matches_nullspace_solver(self):
        rm = build_rate_matrix(PARAMS, 0.7)
        tm = discretize_exact(rm, 2e-4)
        ref = null_space(rm.q.T)[:, 0]
        ref = np.abs(ref) / np.abs(ref).sum()
        np.testing.assert_allclose(steady_state(tm), ref, atol=1e-10)

    def test_identity_has_no_unique_stationary(self):
        with pytest.raises(NonUniqueStationary) as info:
            steady_state(np.eye(3))
        assert len(info.value.recurrent_classes) == 3

    def test_reducible_with_unique_absorbing_class(self):
        p = np.array([[1.0, 0.0, 0.0], [0.3, 0.7, 0.0], [0.0, 0.2, 0.8]])
        np.testing.assert_allclose(steady_state(p), [1.0, 0.0, 0.0], atol=1e-12)

    def test_periodic_chain(self):
        p = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(steady_state(p), [0.5, 0.5], atol=1e-12)

    def test_residual_invariant_random(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p = rng.random((4, 4)) + 1e-3
            p /= p.sum(axis=1, keepdims=True)
            pi = steady_state(p)
            assert np.abs(pi @ p - pi).max() <= 1e-10

    def test_recurrent_classes_of_two_absorbing(self):
        p = np.array([[1.0, 0.0, 0.0], [0.5, 0.0, 0.5], [0.0, 0.0, 1.0]])
        classes = recurrent_classes(p)
        assert sorted(classes) == [(0,), (2,)]


def test_occupancy_propagation_stays_normalized():
    # unit-sum drift stays below 1e-12 per step across 1e4 steps
    tm = discretize_exact(build_rate_matrix(PARAMS, 1.0), 1e-4)
    v = np.array([1.0, 0.0, 0.0])
    prev = 1.0
    for _ in range(10_000):
        v = v @ tm.p
        s = v.sum()
        assert abs(s - prev) <= 1e-12
        prev = s
    assert v.min() >= 0.0
    assert abs(v.sum() - 1.0) <= 1e-12 * 10_000
