"""Symmetric-matrix helpers."""

import numpy as np
import pytest

from startsmd import (
    StartsParams,
    cholesky_pd,
    implied_cov,
    sym_eigen,
    vech,
)


class TestVech:
    def test_two_by_two(self):
        assert np.array_equal(vech(np.array([[1.0, 2.0], [2.0, 3.0]])),
                              np.array([1.0, 2.0, 3.0]))

    def test_identity_order(self):
        assert np.array_equal(vech(np.eye(3)),
                              np.array([1.0, 0, 0, 1.0, 0, 1.0]))

    def test_column_stacked_order(self):
        m = np.arange(16.0).reshape(4, 4)
        m = (m + m.T) / 2
        expected = [m[i, j] for j in range(4) for i in range(j, 4)]
        assert np.array_equal(vech(m), np.array(expected))

    def test_length(self):
        for t in (2, 4, 7):
            sigma = implied_cov(
                StartsParams(0.2, 0.5, 0.3, 0.91, 1.0), t
            )
            assert vech(sigma).size == t * (t + 1) // 2

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            vech(np.ones((2, 3)))


class TestSymEigen:
    def test_diagonal(self):
        evals, evecs = sym_eigen(np.diag([4.0, 1.0]))
        assert np.allclose(evals, [4.0, 1.0])
        assert np.allclose(np.abs(evecs), np.eye(2))

    def test_hand_computed_roots(self):
        # characteristic polynomial of [[2,1],[1,2]]: (2-x)^2 = 1
        evals, _ = sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(evals, [3.0, 1.0], atol=1e-12)

    def test_reconstruction(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((6, 6))
        m = a + a.T
        evals, evecs = sym_eigen(m)
        recon = evecs @ np.diag(evals) @ evecs.T
        scale = np.linalg.norm(m)
        assert np.linalg.norm(recon - m) <= 1e-10 * scale

    def test_descending_order_and_orthonormal(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((5, 5))
        evals, evecs = sym_eigen(a @ a.T)
        assert np.all(np.diff(evals) <= 0)
        assert np.allclose(evecs.T @ evecs, np.eye(5), atol=1e-12)

    def test_sign_convention(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((7, 7))
        _, evecs = sym_eigen(a + a.T)
        lead = np.argmax(np.abs(evecs), axis=0)
        assert np.all(evecs[lead, np.arange(7)] >= 0)

    def test_non_symmetric_rejected(self):
        with pytest.raises(ValueError):
            sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestCholeskyPd:
    def test_identity(self):
        assert np.array_equal(cholesky_pd(np.eye(4)), np.eye(4))

    def test_indefinite_gives_signal(self):
        assert cholesky_pd(np.array([[1.0, 2.0], [2.0, 1.0]])) is None

    def test_factor_reconstructs(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 5))
        m = a @ a.T + 5 * np.eye(5)
        chol = cholesky_pd(m)
        assert np.linalg.norm(chol @ chol.T - m) <= 1e-10 * np.linalg.norm(m)

    def test_simulation_truth_is_pd(self):
        theta = StartsParams(psi2=1.0, phi2=0.5, beta=0.3, omega2=0.91,
                             sigma1_2=1.0)
        for t in (4, 6, 8):
            sigma = implied_cov(theta, t)
            assert np.all(np.linalg.eigvalsh(sigma) > 0)
            assert cholesky_pd(sigma) is not None
