"""Two-stage matrix-decomposition estimator."""

import numpy as np
import pytest

import startsmd.mdfa as mdfa_module
from startsmd import (
    CrossCov,
    DegenerateInputError,
    FitOptions,
    StartsParams,
    build_loading_bundle,
    cross_cov_matrix,
    cross_cov_update,
    fit_tsmdfa,
    implied_cov,
    theta1_update,
    theta2_update,
    tsmdfa_loss,
    vech,
    within_cov,
    within_target,
)

TRUTH = StartsParams(psi2=1.0, phi2=0.5, beta=0.3, omega2=0.91, sigma1_2=1.0)


class TestCrossCovUpdate:
    def test_projection_identity_at_full_rank(self):
        t = 5
        bundle = build_loading_bundle(TRUTH, t)
        s = implied_cov(TRUTH, t)
        cc = cross_cov_update(s, bundle.b_tilde)
        full = cc.concat()
        assert full.shape == (t, 2 * t + 1)
        err = np.linalg.norm(full @ full.T - s) / np.linalg.norm(s)
        assert err <= 1e-8

    def test_scalar_case(self):
        assert cross_cov_matrix(np.array([[4.0]]), np.array([[2.0]])) == (
            pytest.approx(2.0)
        )
        assert cross_cov_matrix(np.array([[4.0]]), np.array([[-2.0]])) == (
            pytest.approx(-2.0)
        )

    def test_population_blocks_at_truth(self):
        t = 6
        bundle = build_loading_bundle(TRUTH, t)
        s = implied_cov(TRUTH, t)
        cc = cross_cov_update(s, bundle.b_tilde)
        assert np.allclose(cc.s_y_s, np.sqrt(TRUTH.phi2), atol=1e-8)
        assert np.allclose(np.diag(cc.s_y_u), np.sqrt(TRUTH.psi2), atol=1e-8)

    def test_degenerate_inputs_rejected(self):
        t = 4
        with pytest.raises(DegenerateInputError):
            cross_cov_update(np.zeros((t, t)), np.ones((t, 2 * t + 1)))
        with pytest.raises(DegenerateInputError):
            cross_cov_update(np.eye(t), np.zeros((t, 2 * t + 1)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cross_cov_update(np.eye(4), np.ones((4, 8)))


class TestTheta2Update:
    def test_constant_trait_column(self):
        cc = CrossCov(
            s_y_s=np.full(4, 0.5), s_y_r=np.eye(4), s_y_u=np.eye(4)
        )
        phi2, _ = theta2_update(cc)
        assert phi2 == pytest.approx(0.25)

    def test_zero_error_block(self):
        cc = CrossCov(
            s_y_s=np.full(3, 0.5), s_y_r=np.eye(3), s_y_u=np.zeros((3, 3))
        )
        assert theta2_update(cc)[1] == 0.0

    def test_mean_then_square(self):
        cc = CrossCov(
            s_y_s=np.array([0.4, 0.6]), s_y_r=np.eye(2), s_y_u=np.eye(2)
        )
        assert theta2_update(cc)[0] == pytest.approx(0.25)

    def test_always_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            t = int(rng.integers(2, 7))
            cc = CrossCov(
                s_y_s=rng.standard_normal(t),
                s_y_r=rng.standard_normal((t, t)),
                s_y_u=rng.standard_normal((t, t)),
            )
            phi2, psi2 = theta2_update(cc)
            assert phi2 >= 0.0 and psi2 >= 0.0


class TestWithinTarget:
    def test_population_residual_block_recovers_within_cov(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            t = int(rng.integers(2, 8))
            theta1 = (
                rng.uniform(-0.9, 0.9),
                rng.uniform(0.05, 2.0),
                rng.uniform(0.05, 2.0),
            )
            theta = StartsParams(0.3, 0.4, theta1[0], theta1[2], theta1[1])
            block = build_loading_bundle(theta, t).lambda_tilde[:, 1:]
            assert np.allclose(
                within_target(block), within_cov(theta1, t), atol=1e-12
            )

    def test_identity_input(self):
        assert np.array_equal(within_target(np.eye(2)), np.eye(2))

    def test_upper_entries_ignored(self):
        base = build_loading_bundle(TRUTH, 4).lambda_tilde[:, 1:]
        noisy = base + np.triu(np.full((4, 4), 9.0), k=1)
        assert np.array_equal(within_target(noisy), within_target(base))

    def test_result_is_psd(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((5, 5))
        target = within_target(m)
        assert np.allclose(target, target.T)
        assert np.min(np.linalg.eigvalsh(target)) >= -1e-12


def brute_force_theta1(target_cov, beta_grid, scale_grid):
    """Small-grid oracle for the inner least-squares update."""
    target = vech(target_cov)
    t = target_cov.shape[0]
    best = (np.inf, None)
    for beta in beta_grid:
        for s1 in scale_grid:
            for w in scale_grid:
                resid = vech(within_cov((beta, s1 * s1, w * w), t)) - target
                loss = float(resid @ resid)
                if loss < best[0]:
                    best = (loss, (beta, s1 * s1, w * w))
    return best


class TestTheta1Update:
    def test_recovers_generating_parameters(self):
        target = within_cov((0.3, 1.0, 0.91), 4)
        beta, s1sq, wsq = theta1_update(target, (0.1, 0.5, 0.5))
        assert beta == pytest.approx(0.3, abs=1e-4)
        assert s1sq == pytest.approx(1.0, abs=1e-4)
        assert wsq == pytest.approx(0.91, abs=1e-4)

    def test_flat_diagonal_target_matches_grid_oracle(self):
        c = 0.8
        target = np.diag([c] * 4)
        beta, s1sq, wsq = theta1_update(target, (0.4, 0.5, 0.5))
        grid_loss, grid_point = brute_force_theta1(
            target,
            np.arange(-0.9, 0.91, 0.05),
            np.arange(0.05, 1.5, 0.05),
        )
        loss = float(np.sum(
            (vech(within_cov((beta, s1sq, wsq), 4)) - vech(target)) ** 2
        ))
        assert loss <= grid_loss + 1e-6
        assert abs(beta) <= 0.05
        assert s1sq == pytest.approx(c, abs=0.02)
        assert wsq == pytest.approx(c, abs=0.02)

    def test_warm_start_at_truth_stays(self):
        target = within_cov((0.3, 1.0, 0.91), 4)
        beta, s1sq, wsq = theta1_update(target, (0.3, 1.0, 0.91))
        assert beta == pytest.approx(0.3, abs=1e-6)
        assert s1sq == pytest.approx(1.0, abs=1e-6)
        assert wsq == pytest.approx(0.91, abs=1e-6)

    def test_never_worse_than_warm_start(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            t = 4
            a = rng.standard_normal((t, t))
            target = a @ a.T
            init = (rng.uniform(-0.9, 0.9), rng.uniform(0.05, 2),
                    rng.uniform(0.05, 2))
            beta, s1sq, wsq = theta1_update(target, init)
            loss_new = float(np.sum(
                (vech(within_cov((beta, s1sq, wsq), t)) - vech(target)) ** 2
            ))
            loss_init = float(np.sum(
                (vech(within_cov(init, t)) - vech(target)) ** 2
            ))
            assert loss_new <= loss_init + 1e-12
            assert s1sq >= 0.0 and wsq >= 0.0

    def test_out_of_range_warm_start_is_preserved(self):
        truth = (1.5, 0.8, 0.4)
        target = within_cov(truth, 4)
        beta, s1sq, wsq = theta1_update(target, truth)
        assert (beta, s1sq, wsq) == truth

    def test_negative_warm_variance_rejected(self):
        with pytest.raises(ValueError):
            theta1_update(np.eye(4), (0.3, -0.1, 0.5))


class TestTsmdfaLoss:
    def test_zero_at_equality(self):
        bundle = build_loading_bundle(TRUTH, 4)
        b = bundle.b_tilde
        cc = CrossCov(b[:, 0], b[:, 1:5], b[:, 5:])
        assert tsmdfa_loss(cc, b, 500) == 0.0

    def test_single_entry_deviation(self):
        bundle = build_loading_bundle(TRUTH, 4)
        b = bundle.b_tilde.copy()
        cc = CrossCov(b[:, 0].copy(), b[:, 1:5].copy(), b[:, 5:].copy())
        cc.s_y_r[2, 1] += 0.25
        assert tsmdfa_loss(cc, bundle.b_tilde, 200) == pytest.approx(
            200 * 0.25 ** 2
        )

    def test_near_zero_at_population_truth(self):
        t = 6
        bundle = build_loading_bundle(TRUTH, t)
        s = implied_cov(TRUTH, t)
        cc = cross_cov_update(s, bundle.b_tilde)
        assert tsmdfa_loss(cc, bundle.b_tilde, 1000) <= 1e-8 * 1000


class TestFixedPoint:
    def test_one_public_iteration_stays_at_truth(self):
        t = 6
        n_obs = 1000
        s = implied_cov(TRUTH, t)
        bundle = build_loading_bundle(TRUTH, t)
        cc = cross_cov_update(s, bundle.b_tilde)
        beta, s1sq, wsq = theta1_update(
            within_target(cc.s_y_r), TRUTH.theta1
        )
        phi2, psi2 = theta2_update(cc)
        new = StartsParams(psi2=psi2, phi2=phi2, beta=beta, omega2=wsq,
                           sigma1_2=s1sq)
        assert np.allclose(new.to_array(), TRUTH.to_array(), atol=1e-8)
        assert tsmdfa_loss(cc, bundle.b_tilde, n_obs) <= 1e-8 * n_obs


class TestFitTsmdfa:
    def test_population_recovery(self):
        t = 8
        s = implied_cov(TRUTH, t)
        fit = fit_tsmdfa(
            s, 1000, t,
            FitOptions(n_starts=20, max_iters=30000, param_tol=1e-8,
                       rng_seed=42),
        )
        assert np.allclose(
            fit.theta_hat.to_array(), TRUTH.to_array(), atol=1e-3
        )
        assert fit.converged in ("param-tolerance", "patience-stop")

    def test_trait_and_error_estimates_nonnegative(self):
        rng = np.random.default_rng(31)
        a = rng.standard_normal((200, 4))
        s = np.cov(a.T)
        fit = fit_tsmdfa(s, 200, 4, FitOptions(n_starts=8, rng_seed=0))
        assert fit.theta_hat.phi2 >= 0.0
        assert fit.theta_hat.psi2 >= 0.0
        assert fit.theta_hat.omega2 >= 0.0
        assert fit.theta_hat.sigma1_2 >= 0.0

    def test_reported_loss_is_minimum_of_trace(self):
        s = implied_cov(TRUTH, 4)
        fit = fit_tsmdfa(s, 500, 4, FitOptions(n_starts=5, rng_seed=3))
        assert fit.trace is not None
        assert fit.loss <= np.min(fit.trace) + 1e-15

    def test_seed_determinism(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal((150, 5))
        s = np.cov(a.T)
        opts = FitOptions(n_starts=6, rng_seed=99)
        fit1 = fit_tsmdfa(s, 150, 5, opts)
        fit2 = fit_tsmdfa(s, 150, 5, opts)
        assert fit1.theta_hat == fit2.theta_hat
        assert fit1.loss == fit2.loss
        assert fit1.start_index == fit2.start_index
        assert fit1.n_iters == fit2.n_iters
        assert fit1.converged == fit2.converged
        assert np.array_equal(fit1.trace, fit2.trace)

    def test_python_and_compiled_paths_agree(self, monkeypatch):
        if not mdfa_module.HAVE_NUMBA:
            pytest.skip("compiled path unavailable")
        rng = np.random.default_rng(23)
        a = rng.standard_normal((80, 4))
        s = np.cov(a.T)
        opts = FitOptions(n_starts=3, max_iters=40, rng_seed=5)
        fast = fit_tsmdfa(s, 80, 4, opts)
        monkeypatch.setattr(mdfa_module, "HAVE_NUMBA", False)
        slow = fit_tsmdfa(s, 80, 4, opts)
        assert fast.start_index == slow.start_index
        assert fast.n_iters == slow.n_iters
        # the two paths sum in different orders, so agreement is to float
        # accumulation noise, not bitwise
        assert fast.loss == pytest.approx(slow.loss, rel=1e-6)
        assert np.allclose(
            fast.theta_hat.to_array(), slow.theta_hat.to_array(),
            rtol=1e-5, atol=1e-7,
        )

    def test_zero_covariance_rejected(self):
        with pytest.raises(DegenerateInputError):
            fit_tsmdfa(np.zeros((4, 4)), 100, 4, FitOptions(n_starts=2))

    def test_identification_limit(self):
        with pytest.raises(ValueError, match="identified"):
            fit_tsmdfa(np.eye(3), 100, 3, FitOptions(n_starts=2))

    def test_initial_value_count_checked(self):
        s = implied_cov(TRUTH, 4)
        with pytest.raises(ValueError, match="initial values"):
            fit_tsmdfa(s, 100, 4, FitOptions(n_starts=3), [TRUTH])
