"""Model structure: coefficient matrix, covariances, loading bundle."""

import numpy as np
import pytest

from startsmd import (
    StartsParams,
    build_gamma,
    build_loading_bundle,
    implied_cov,
    within_cov,
)

TRUTH = StartsParams(psi2=0.2, phi2=0.5, beta=0.3, omega2=0.91, sigma1_2=1.0)


def ar_cov_by_recursion(beta, sigma1_2, omega2, t):
    """Independent oracle: variance recursion plus lagged covariances."""
    var = np.empty(t)
    var[0] = sigma1_2
    for k in range(1, t):
        var[k] = beta ** 2 * var[k - 1] + omega2
    cov = np.diag(var)
    for i in range(t):
        for j in range(i):
            cov[i, j] = cov[j, i] = beta ** (i - j) * var[j]
    return cov


class TestBuildGamma:
    def test_superdiagonal_placement(self):
        expected = np.array([[0, 0.5, 0], [0, 0, 0.5], [0, 0, 0]])
        assert np.array_equal(build_gamma(0.5, 3), expected)

    def test_zero_beta(self):
        assert np.array_equal(build_gamma(0.0, 4), np.zeros((4, 4)))

    def test_neumann_series_inverse(self):
        # (I - Gamma)^-1 = I + Gamma + Gamma^2 + Gamma^3 for T = 4
        gamma = build_gamma(0.3, 4)
        series = (
            np.eye(4) + gamma + gamma @ gamma + gamma @ gamma @ gamma
        )
        inv = np.linalg.inv(np.eye(4) - gamma)
        assert np.allclose(inv, series, atol=1e-14)
        assert inv[0, 3] == pytest.approx(0.3 ** 3, abs=1e-15)

    def test_nilpotent(self):
        for t in (2, 3, 5, 8):
            gamma = build_gamma(0.7, t)
            assert np.array_equal(np.linalg.matrix_power(gamma, t),
                                  np.zeros((t, t)))

    def test_too_few_time_points(self):
        with pytest.raises(ValueError):
            build_gamma(0.5, 1)


class TestWithinCov:
    def test_stationary_unit_variances(self):
        cov = within_cov((0.3, 1.0, 0.91), 3)
        assert np.allclose(np.diag(cov), 1.0, atol=1e-12)
        assert cov[0, 1] == pytest.approx(0.3, abs=1e-12)
        assert cov[0, 2] == pytest.approx(0.09, abs=1e-12)

    def test_nonstationary_hand_value(self):
        assert np.allclose(
            within_cov((0.5, 1.0, 1.0), 2),
            np.array([[1.0, 0.5], [0.5, 1.25]]),
            atol=1e-14,
        )

    def test_monte_carlo_oracle(self):
        # simulate the autoregression directly and compare sample moments
        rng = np.random.default_rng(7)
        n = 1_000_000
        y1 = rng.standard_normal(n)
        y2 = 0.5 * y1 + rng.standard_normal(n)
        sample = np.cov(np.column_stack([y1, y2]).T)
        assert np.allclose(sample, within_cov((0.5, 1.0, 1.0), 2), atol=0.01)

    def test_no_autoregression(self):
        cov = within_cov((0.0, 2.0, 0.7), 3)
        assert np.allclose(cov, np.diag([2.0, 0.7, 0.7]), atol=1e-15)

    def test_matches_recursion_on_random_draws(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            beta = rng.uniform(-1.3, 1.3)
            s1 = rng.uniform(0.01, 3.0)
            w = rng.uniform(0.01, 3.0)
            t = int(rng.integers(2, 9))
            assert np.allclose(
                within_cov((beta, s1, w), t),
                ar_cov_by_recursion(beta, s1, w, t),
                rtol=1e-12, atol=1e-12,
            )

    def test_unit_root_has_no_singularity(self):
        cov = within_cov((1.0, 1.0, 0.5), 4)
        assert np.all(np.isfinite(cov))
        assert cov[3, 3] == pytest.approx(1.0 + 3 * 0.5, abs=1e-12)


class TestImpliedCov:
    def test_stationary_hand_values(self):
        sigma = implied_cov(TRUTH, 4)
        assert np.allclose(np.diag(sigma), 1.7, atol=1e-12)
        for lag, expected in ((1, 0.8), (2, 0.59), (3, 0.527)):
            vals = np.diag(sigma, k=lag)
            assert np.allclose(vals, expected, atol=1e-12)

    def test_degenerate_components_vanish(self):
        theta = StartsParams(psi2=0.0, phi2=0.0, beta=0.4, omega2=0.3,
                             sigma1_2=0.9)
        assert np.allclose(
            implied_cov(theta, 5), within_cov(theta.theta1, 5), atol=1e-15
        )

    def test_monte_carlo_oracle_from_recursions(self):
        # build data from the defining recursions: trait + AR + error
        rng = np.random.default_rng(123)
        n, t = 1_000_000, 4
        theta = StartsParams(psi2=1.0, phi2=0.5, beta=0.3, omega2=0.91,
                             sigma1_2=1.0)
        trait = rng.normal(0, np.sqrt(theta.phi2), n)
        ystar = np.empty((n, t))
        ystar[:, 0] = rng.normal(0, np.sqrt(theta.sigma1_2), n)
        for k in range(1, t):
            ystar[:, k] = theta.beta * ystar[:, k - 1] + rng.normal(
                0, np.sqrt(theta.omega2), n
            )
        y = trait[:, None] + ystar + rng.normal(
            0, np.sqrt(theta.psi2), (n, t)
        )
        sample = np.cov(y.T)
        assert np.allclose(sample, implied_cov(theta, t), atol=0.01)

    def test_simulation_truth_has_unit_within_variance(self):
        for t in (4, 6, 8):
            sigma = implied_cov(TRUTH, t)
            within = sigma - TRUTH.phi2 - TRUTH.psi2 * np.eye(t)
            assert np.allclose(np.diag(within), 1.0, atol=1e-12)


class TestLoadingBundle:
    def test_trait_column_is_constant_sqrt(self):
        theta = StartsParams(psi2=0.1, phi2=0.25, beta=0.3, omega2=0.5,
                             sigma1_2=0.7)
        bundle = build_loading_bundle(theta, 5)
        assert np.allclose(bundle.lambda_tilde[:, 0], 0.5, atol=1e-15)

    def test_within_block_lower_triangular(self):
        bundle = build_loading_bundle(TRUTH, 5)
        block = bundle.lambda_tilde[:, 1:]
        assert np.allclose(block, np.tril(block), atol=0)

    def test_reconstructs_implied_cov(self):
        bundle = build_loading_bundle(TRUTH, 4)
        recon = (
            bundle.lambda_tilde @ bundle.lambda_tilde.T
            + bundle.d_tilde @ bundle.d_tilde
        )
        assert np.allclose(recon, implied_cov(TRUTH, 4), atol=1e-10)

    def test_identity_across_dimensions_and_params(self):
        rng = np.random.default_rng(5)
        for t in range(2, 13):
            theta = StartsParams(
                psi2=rng.uniform(0, 2),
                phi2=rng.uniform(0, 2),
                beta=rng.uniform(-1.1, 1.1),
                omega2=rng.uniform(0, 2),
                sigma1_2=rng.uniform(0, 2),
            )
            bundle = build_loading_bundle(theta, t)
            recon = (
                bundle.lambda_tilde @ bundle.lambda_tilde.T
                + bundle.d_tilde @ bundle.d_tilde
            )
            assert np.allclose(recon, implied_cov(theta, t), atol=1e-10)

    def test_zero_error_variance(self):
        theta = StartsParams(psi2=0.0, phi2=0.5, beta=0.3, omega2=0.91,
                             sigma1_2=1.0)
        bundle = build_loading_bundle(theta, 3)
        assert np.array_equal(bundle.d_tilde, np.zeros((3, 3)))

    def test_concatenation_shape(self):
        bundle = build_loading_bundle(TRUTH, 6)
        assert bundle.b_tilde.shape == (6, 13)
        assert np.array_equal(bundle.b_tilde[:, :7], bundle.lambda_tilde)
        assert np.array_equal(bundle.b_tilde[:, 7:], bundle.d_tilde)

    def test_negative_variance_rejected(self):
        theta = StartsParams(psi2=-0.1, phi2=0.5, beta=0.3, omega2=0.91,
                             sigma1_2=1.0)
        with pytest.raises(ValueError, match="psi2"):
            build_loading_bundle(theta, 4)


class TestStartsParams:
    def test_partition_covers_all_parameters(self):
        assert TRUTH.theta1 == (0.3, 1.0, 0.91)
        assert TRUTH.theta2 == (0.5, 0.2)

    def test_array_round_trip(self):
        arr = TRUTH.to_array()
        assert arr.shape == (5,)
        assert StartsParams.from_array(arr) == TRUTH

    def test_admissibility_ignores_beta(self):
        assert StartsParams(0.1, 0.1, -3.0, 0.1, 0.1).is_admissible()
        assert not StartsParams(-1e-9, 0.1, 0.3, 0.1, 0.1).is_admissible()
