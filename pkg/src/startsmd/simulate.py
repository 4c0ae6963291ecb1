"""Data generation, sample covariances and initial-value draws."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .linalg import cholesky_pd
from .model import StartsParams, implied_cov


@dataclass(frozen=True)
class SimConfig:
    """Configuration for one simulated dataset.

    ``n_obs`` must exceed the number of time points, and fits require
    ``t >= 4``.  Data are column-centered after generation unless ``centered``
    is disabled.
    """

    theta_true: StartsParams
    n_obs: int
    t: int
    seed: int = 0
    centered: bool = True

    def __post_init__(self):
        if self.n_obs < self.t + 1:
            raise ValueError("need n_obs >= t + 1")


@dataclass(frozen=True)
class ParamDistributions:
    """Named drawing distributions for each model parameter.

    Each entry is ("gamma", shape, rate_or_scale) or ("beta", a, b).  The
    ``gamma_convention`` field selects whether the gamma second argument is a
    rate (the default, matching common statistical software) or a scale.
    """

    psi2: tuple = ("gamma", 2.0, 4.0)
    phi2: tuple = ("gamma", 3.0, 4.0)
    beta: tuple = ("beta", 4.0, 4.0)
    omega2: tuple = ("gamma", 4.0, 4.0)
    sigma1_2: tuple = ("gamma", 4.0, 4.0)
    gamma_convention: str = "rate"


# Initial-value distributions used throughout the simulation study.
STUDY_INITIAL_DISTS = ParamDistributions(
    psi2=("gamma", 2.0, 4.0),
    phi2=("gamma", 3.0, 4.0),
    beta=("beta", 4.0, 4.0),
    omega2=("gamma", 4.0, 4.0),
    sigma1_2=("gamma", 4.0, 4.0),
)

# Wider, smaller-scale draws suited to fitting empirical covariances.
FIT_INITIAL_DISTS = ParamDistributions(
    psi2=("gamma", 2.0, 4.0),
    phi2=("gamma", 2.0, 6.0),
    beta=("beta", 4.0, 4.0),
    omega2=("gamma", 2.0, 4.0),
    sigma1_2=("gamma", 2.0, 4.0),
)


def _draw_one(rng, spec, convention):
    kind, a, b = spec
    if a <= 0 or b <= 0:
        raise ValueError(f"distribution parameters must be positive: {spec}")
    if kind == "gamma":
        scale = 1.0 / b if convention == "rate" else b
        return rng.gamma(a, scale)
    if kind == "beta":
        return rng.beta(a, b)
    raise ValueError(f"unknown distribution kind {kind!r}")


def draw_initial_values(
    dists: ParamDistributions, m: int, seed=0
) -> list[StartsParams]:
    """Draw ``m`` independent starting parameter vectors.

    Parameters are drawn one vector at a time in canonical order (psi2,
    phi2, beta, omega2, sigma1_2), so a fixed seed reproduces the draws.
    Gamma draws are strictly positive and beta draws lie in (0, 1).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if dists.gamma_convention not in ("rate", "scale"):
        raise ValueError(
            f"gamma_convention must be 'rate' or 'scale', "
            f"got {dists.gamma_convention!r}"
        )
    rng = np.random.default_rng(seed)
    conv = dists.gamma_convention
    out = []
    for _ in range(m):
        out.append(
            StartsParams(
                psi2=_draw_one(rng, dists.psi2, conv),
                phi2=_draw_one(rng, dists.phi2, conv),
                beta=_draw_one(rng, dists.beta, conv),
                omega2=_draw_one(rng, dists.omega2, conv),
                sigma1_2=_draw_one(rng, dists.sigma1_2, conv),
            )
        )
    return out


def simulate_rows(chol: np.ndarray, n_obs: int, rng) -> np.ndarray:
    """Draw ``n_obs`` zero-mean normal rows from a Cholesky factor."""
    z = rng.standard_normal((n_obs, chol.shape[0]))
    return z @ chol.T


def gen_dataset(cfg: SimConfig) -> np.ndarray:
    """Generate one dataset of i.i.d. multivariate-normal rows.

    Rows follow the model-implied covariance of ``cfg.theta_true``; columns
    are centered afterwards when ``cfg.centered``.  The implied covariance
    must be positive definite.
    """
    sigma = implied_cov(cfg.theta_true, cfg.t)
    chol = cholesky_pd(sigma)
    if chol is None:
        raise ValueError(
            "implied covariance of the generating parameters is not "
            "positive definite"
        )
    y = simulate_rows(chol, cfg.n_obs, np.random.default_rng(cfg.seed))
    if cfg.centered:
        y = y - y.mean(axis=0)
    return y


def sample_cov(y: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance of the columns of ``y``.

    Columns are centered first, so pre-centering the data does not change
    the result.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows for a sample covariance")
    yc = y - y.mean(axis=0)
    s = yc.T @ yc / (n - 1)
    return (s + s.T) / 2.0


def write_dataset_csv(path, y: np.ndarray) -> None:
    """Write a dataset as CSV with header t1..tT and round-trip decimals."""
    y = np.asarray(y, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"t{j + 1}" for j in range(y.shape[1])])
        for row in y:
            writer.writerow([repr(float(v)) for v in row])
