import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialgev.gp import (
    GPNumericalError,
    KernelConfig,
    SiteSet,
    covariance_matrix,
    cross_covariance,
    distance_matrix,
    exp_kernel,
    gp_condition,
    gp_logdensity,
    gp_logdensity_and_grad,
    kriging_weights,
)


def dense_cov(coords, alpha, rho, jitter):
    n = len(coords)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            d = math.hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1])
            K[i, j] = alpha**2 * math.exp(-d / rho)
    return K + jitter * np.eye(n)


def dense_logdensity(f, K):
    n = len(f)
    return -0.5 * f @ np.linalg.inv(K) @ f - 0.5 * math.log(np.linalg.det(K)) - 0.5 * n * math.log(2 * math.pi)


def random_sites(rng, n):
    return rng.uniform([-96, 28], [-93, 31], size=(n, 2))


class TestTypes:
    def test_kernel_config_validation(self):
        for bad in [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (np.nan, 1.0)]:
            with pytest.raises(ValueError):
                KernelConfig(*bad)
        with pytest.raises(ValueError):
            KernelConfig(1.0, 1.0, jitter=-1.0)

    def test_siteset_shape_and_ids(self):
        with pytest.raises(ValueError):
            SiteSet(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            SiteSet(np.array([[0.0, np.inf]]))
        with pytest.raises(ValueError):
            SiteSet(np.zeros((2, 2)) + [[0, 0], [1, 1]], ids=("a",))

    def test_duplicate_sites_detected(self):
        s = SiteSet(np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValueError):
            s.check_distinct()
        SiteSet(np.array([[0.0, 0.0], [1.0, 1.0]])).check_distinct()


class TestKernel:
    def test_zero_distance(self):
        assert exp_kernel((1.0, 2.0), (1.0, 2.0), KernelConfig(2.0, 3.0)) == pytest.approx(4.0)

    def test_distance_equals_length(self):
        assert exp_kernel((0.0, 0.0), (3.0, 4.0), KernelConfig(1.0, 5.0)) == pytest.approx(math.exp(-1))

    def test_decreasing_in_distance(self):
        cfg = KernelConfig(1.3, 0.7)
        assert exp_kernel((0, 0), (1, 0), cfg) > exp_kernel((0, 0), (2, 0), cfg)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(0.1, 3), st.floats(0.1, 5))
    def test_symmetric_and_maximal_at_zero(self, xy, alpha, rho):
        cfg = KernelConfig(alpha, rho)
        a, b = xy[:2], xy[2:]
        assert exp_kernel(a, b, cfg) == exp_kernel(b, a, cfg)
        assert exp_kernel(a, b, cfg) <= exp_kernel(a, a, cfg)

    def test_distance_is_plain_degrees(self):
        d = distance_matrix([[-95.0, 29.0]], [[-94.0, 30.0]])
        assert d[0, 0] == pytest.approx(math.sqrt(2.0))


class TestCovariance:
    def test_single_site(self):
        K = covariance_matrix(SiteSet(np.array([[0.0, 0.0]])), KernelConfig(1.5, 2.0, jitter=0.01))
        np.testing.assert_allclose(K, [[1.5**2 + 0.01]])

    def test_relative_jitter_on_diagonal(self):
        K = covariance_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), KernelConfig(2.0, 1.0))
        np.testing.assert_allclose(np.diag(K), 4.0 * (1 + 1e-8))

    def test_positive_definite_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            c = random_sites(rng, 3)
            K = covariance_matrix(c, KernelConfig(rng.uniform(0.2, 2), rng.uniform(0.2, 4)))
            assert np.all(np.linalg.eigvalsh(K) > 0)

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(1)
        K = covariance_matrix(random_sites(rng, 12), KernelConfig(1.1, 0.9))
        assert np.array_equal(K, K.T)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        c = random_sites(rng, 6)
        perm = rng.permutation(6)
        cfg = KernelConfig(0.8, 1.7, jitter=1e-6)
        K = covariance_matrix(c, cfg)
        Kp = covariance_matrix(c[perm], cfg)
        np.testing.assert_allclose(Kp, K[np.ix_(perm, perm)], rtol=0, atol=1e-15)

    def test_escalation_then_error(self):
        # coincident sites make the base matrix singular; relative jitter rescues it
        c = np.array([[0.0, 0.0], [0.0, 0.0]])
        K = covariance_matrix(c, KernelConfig(1.0, 1.0))
        assert np.all(np.linalg.eigvalsh(K) > 0)
        # a fixed zero jitter cannot
        with pytest.raises(GPNumericalError) as err:
            covariance_matrix(c, KernelConfig(1.0, 1.0, jitter=0.0))
        assert err.value.min_eigenvalue is not None
        assert err.value.min_eigenvalue == pytest.approx(0.0, abs=1e-12)


class TestLogDensity:
    def test_standard_normal_at_zero(self):
        lp = gp_logdensity([0.0], np.array([[0.0, 0.0]]), KernelConfig(1.0, 1.0, jitter=0.0))
        assert lp == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for n in range(1, 7):
            for _ in range(10):
                c = random_sites(rng, n)
                alpha, rho, jit = rng.uniform(0.3, 2), rng.uniform(0.3, 3), rng.choice([0.0, 1e-6])
                f = rng.normal(0, alpha, n)
                lp = gp_logdensity(f, c, KernelConfig(alpha, rho, jitter=jit))
                ref = dense_logdensity(f, dense_cov(c, alpha, rho, jit))
                assert lp == pytest.approx(ref, abs=1e-8)

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(4)
        c = random_sites(rng, 5)
        f = rng.normal(size=5)
        cfg = KernelConfig(1.0, 1.0)
        const = gp_logdensity(np.zeros(5), c, cfg)
        q1 = gp_logdensity(f, c, cfg) - const
        q3 = gp_logdensity(3.0 * f, c, cfg) - const
        assert q3 == pytest.approx(9.0 * q1, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            gp_logdensity([0.0, 1.0], np.zeros((3, 2)) + np.arange(3)[:, None], KernelConfig(1, 1))

    @pytest.mark.parametrize("jitter", [None, 1e-6])
    def test_gradients_match_finite_differences(self, jitter):
        rng = np.random.default_rng(5)
        c = random_sites(rng, 5)
        d = distance_matrix(c, c)
        f = rng.normal(size=5)
        la, lr = math.log(0.9), math.log(1.4)
        lp, gf, gla, glr = gp_logdensity_and_grad(f, d, la, lr, jitter)
        h = 1e-6

        def val(ff, a, r):
            return gp_logdensity_and_grad(ff, d, a, r, jitter)[0]

        assert gla == pytest.approx((val(f, la + h, lr) - val(f, la - h, lr)) / (2 * h), rel=1e-6)
        assert glr == pytest.approx((val(f, la, lr + h) - val(f, la, lr - h)) / (2 * h), rel=1e-6)
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            assert gf[i] == pytest.approx((val(f + e, la, lr) - val(f - e, la, lr)) / (2 * h), rel=1e-6, abs=1e-8)


class TestConditioning:
    def test_reproduces_observed(self):
        rng = np.random.default_rng(6)
        c = random_sites(rng, 5)
        f = rng.normal(size=5)
        mean, cov = gp_condition(f, c, c, KernelConfig(1.2, 1.5, jitter=0.0))
        np.testing.assert_allclose(mean, f, atol=1e-8)
        assert np.max(np.abs(cov)) <= 1e-8

    def test_far_target_reverts_to_prior(self):
        c = np.array([[0.0, 0.0], [1.0, 0.0]])
        mean, cov = gp_condition([2.0, -1.0], c, np.array([[1e4, 1e4]]), KernelConfig(1.5, 1.0))
        assert mean[0] == pytest.approx(0.0, abs=1e-12)
        assert cov[0, 0] == pytest.approx(2.25, rel=1e-12)

    def test_brute_force_joint_normal(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            A, B = random_sites(rng, 4), random_sites(rng, 2)
            alpha, rho = rng.uniform(0.3, 2), rng.uniform(0.3, 3)
            f = rng.normal(0, alpha, 4)
            mean, cov = gp_condition(f, A, B, KernelConfig(alpha, rho, jitter=0.0))
            full = dense_cov(np.vstack([A, B]), alpha, rho, 0.0)
            Kaa, Kab, Kbb = full[:4, :4], full[:4, 4:], full[4:, 4:]
            inv = np.linalg.inv(Kaa)
            np.testing.assert_allclose(mean, Kab.T @ inv @ f, atol=1e-8)
            np.testing.assert_allclose(cov, Kbb - Kab.T @ inv @ Kab, atol=1e-8)

    def test_variance_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            A, B = random_sites(rng, 8), random_sites(rng, 10)
            _, cov = gp_condition(rng.normal(size=8), A, B, KernelConfig(rng.uniform(0.2, 3), rng.uniform(0.1, 5)))
            assert np.all(np.diag(cov) >= -1e-10)

    def test_long_range_averages_cluster(self):
        A = np.array([[0.0, 0.0], [1.0, 0.0]])
        mean, _ = gp_condition([1.0, 3.0], A, np.array([[0.5, 0.0]]), KernelConfig(1.0, 1e6))
        assert mean[0] == pytest.approx(2.0, abs=1e-3)

    def test_empty_observed_rejected(self):
        with pytest.raises(ValueError):
            gp_condition([], np.empty((0, 2)), np.zeros((1, 2)), KernelConfig(1, 1))

    def test_kriging_weights_agree(self):
        rng = np.random.default_rng(9)
        A, B = random_sites(rng, 6), random_sites(rng, 3)
        f = rng.normal(size=6)
        cfg = KernelConfig(0.7, 2.2)
        mean, cov = gp_condition(f, A, B, cfg)
        W, var = kriging_weights(A, B, cfg)
        np.testing.assert_allclose(W @ f, mean, atol=1e-12)
        np.testing.assert_allclose(var, np.clip(np.diag(cov), 0, None), atol=1e-12)

    def test_cross_covariance_shape(self):
        assert cross_covariance(np.zeros((2, 2)), np.ones((5, 2)), KernelConfig(1, 1)).shape == (2, 5)
