"""Latent trait/state/error panel model: parameters and covariance structure.

An observed panel score decomposes into a time-invariant trait (variance
``phi2``), a first-order autoregressive within-person deviation (coefficient
``beta``, innovation variance ``omega2``, initial variance ``sigma1_2``) and
occasion-specific measurement error (variance ``psi2``).  This module houses
the parameter container, the autoregression coefficient matrix, the implied
covariance structure, and its factor-analytic loading representation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PARAM_NAMES = ("psi2", "phi2", "beta", "omega2", "sigma1_2")
VARIANCE_NAMES = ("psi2", "phi2", "omega2", "sigma1_2")


@dataclass(frozen=True)
class StartsParams:
    """Full parameter vector theta = (psi2, phi2, beta, omega2, sigma1_2).

    The vector splits into the within-person block theta1 = (beta, sigma1_2,
    omega2) and the trait/error block theta2 = (phi2, psi2); the two blocks
    cover all five parameters with no overlap.

    Parameters
    ----------
    psi2 : float
        Measurement error variance (state component).
    phi2 : float
        Stable trait variance.
    beta : float
        Autoregressive coefficient of the within-person process.  Not
        restricted to (-1, 1); nonstationary values simply make the
        within-person variance grow over time.
    omega2 : float
        Innovation variance of the autoregression for t >= 2.
    sigma1_2 : float
        Variance of the initial within-person deviation.
    """

    psi2: float
    phi2: float
    beta: float
    omega2: float
    sigma1_2: float

    def to_array(self) -> np.ndarray:
        """Return theta as a length-5 array in canonical order."""
        return np.array(
            [self.psi2, self.phi2, self.beta, self.omega2, self.sigma1_2]
        )

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "StartsParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (5,):
            raise ValueError(f"expected 5 parameters, got shape {theta.shape}")
        return cls(*(float(v) for v in theta))

    @property
    def theta1(self) -> tuple[float, float, float]:
        """Within-person block (beta, sigma1_2, omega2)."""
        return (self.beta, self.sigma1_2, self.omega2)

    @property
    def theta2(self) -> tuple[float, float]:
        """Trait and error block (phi2, psi2)."""
        return (self.phi2, self.psi2)

    def is_admissible(self) -> bool:
        """True when all four variance parameters are nonnegative."""
        return (
            self.psi2 >= 0.0
            and self.phi2 >= 0.0
            and self.omega2 >= 0.0
            and self.sigma1_2 >= 0.0
        )


@dataclass(frozen=True)
class LoadingBundle:
    """Structured loading matrices of the factor-analytic representation.

    ``lambda_tilde`` is T x (T+1): a constant trait column sqrt(phi2) * 1
    followed by the lower-triangular within-person block, which is the
    transpose of diag(sigma1, omega * 1) (I - Gamma)^-1.  ``d_tilde`` is the
    diagonal error block sqrt(psi2) * I, and ``b_tilde`` the horizontal
    concatenation [lambda_tilde | d_tilde] of shape T x (2T+1).

    Satisfies lambda_tilde @ lambda_tilde.T + d_tilde**2 == implied covariance.
    """

    lambda_tilde: np.ndarray
    d_tilde: np.ndarray
    b_tilde: np.ndarray


@lru_cache(maxsize=None)
def _lag_structure(t: int) -> tuple[np.ndarray, np.ndarray]:
    """Cached (exponent, upper-triangle mask) grids for (I - Gamma)^-1."""
    idx = np.arange(t)
    lag = idx[None, :] - idx[:, None]
    mask = lag >= 0
    return np.where(mask, lag, 0), mask


def build_gamma(beta: float, t: int) -> np.ndarray:
    """Autoregression coefficient matrix Gamma.

    Gamma carries ``beta`` on the first superdiagonal and zeros elsewhere,
    so column t of Y* @ Gamma equals beta times column t-1.  (I - Gamma) is
    unit upper triangular, hence always invertible, and Gamma is nilpotent
    (Gamma**t == 0).

    Parameters
    ----------
    beta : float
        Autoregressive coefficient.
    t : int
        Number of time points, at least 2.
    """
    if t < 2:
        raise ValueError(f"need at least 2 time points, got t={t}")
    gamma = np.zeros((t, t))
    gamma[np.arange(t - 1), np.arange(1, t)] = beta
    return gamma


def _i_minus_gamma_inv(beta: float, t: int) -> np.ndarray:
    """(I - Gamma)^-1 in closed form: entry (i, j) = beta**(j-i) for j >= i."""
    powers = np.empty(t)
    powers[0] = 1.0
    if t > 1:
        powers[1:] = np.cumprod(np.full(t - 1, float(beta)))
    exponent, mask = _lag_structure(t)
    return np.where(mask, powers[exponent], 0.0)


def within_cov(theta1: tuple[float, float, float], t: int) -> np.ndarray:
    """Covariance matrix of the within-person autoregressive deviations.

    Computes Sigma* = (I - Gamma)^-T diag(sigma1_2, omega2 * 1) (I - Gamma)^-1.
    Its diagonal follows the recursion Var_1 = sigma1_2,
    Var_t = beta**2 Var_{t-1} + omega2, and the off-diagonal (t, t') for
    t > t' equals beta**(t-t') Var_{t'}.  The matrix form has no singularity
    at beta**2 == 1.

    Parameters
    ----------
    theta1 : tuple
        Within-person block (beta, sigma1_2, omega2).
    t : int
        Number of time points, at least 2.
    """
    if t < 2:
        raise ValueError(f"need at least 2 time points, got t={t}")
    beta, sigma1_2, omega2 = theta1
    minv = _i_minus_gamma_inv(beta, t)
    d = np.full(t, float(omega2))
    d[0] = sigma1_2
    return minv.T @ (d[:, None] * minv)


def implied_cov(theta: StartsParams, t: int) -> np.ndarray:
    """Model-implied covariance matrix of the observed scores.

    Sigma(theta) = phi2 * J + Sigma*(theta1) + psi2 * I, with J the all-ones
    matrix: the trait loads every occasion, the within-person process
    contributes its autoregressive structure, and measurement error adds to
    the diagonal only.
    """
    sigma = within_cov(theta.theta1, t)
    sigma += theta.phi2
    sigma[np.arange(t), np.arange(t)] += theta.psi2
    return sigma


def build_loading_bundle(theta: StartsParams, t: int) -> LoadingBundle:
    """Assemble the loading matrices of the factor-analytic representation.

    Requires nonnegative variance parameters since their square roots enter
    the loadings.  The returned bundle reproduces the implied covariance
    exactly: lambda_tilde @ lambda_tilde.T + d_tilde**2 == implied_cov(theta).
    """
    if t < 2:
        raise ValueError(f"need at least 2 time points, got t={t}")
    negative = [
        name for name in VARIANCE_NAMES if getattr(theta, name) < 0.0
    ]
    if negative:
        raise ValueError(
            f"variance parameters must be nonnegative to take square roots, "
            f"got negative {', '.join(negative)}"
        )
    scale = np.full(t, np.sqrt(theta.omega2))
    scale[0] = np.sqrt(theta.sigma1_2)
    minv = _i_minus_gamma_inv(theta.beta, t)
    within_block = minv.T * scale[None, :]
    lambda_tilde = np.column_stack(
        [np.full(t, np.sqrt(theta.phi2)), within_block]
    )
    d_tilde = np.sqrt(theta.psi2) * np.eye(t)
    b_tilde = np.hstack([lambda_tilde, d_tilde])
    return LoadingBundle(lambda_tilde, d_tilde, b_tilde)
