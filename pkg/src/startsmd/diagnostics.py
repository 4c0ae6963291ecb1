"""Improper-solution detection, residual fit diagnostics, bootstrap errors."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import check_symmetric
from .model import PARAM_NAMES, StartsParams

# Variance estimates below these values count as improper solutions: the
# strict criterion flags near-zero and negative variances, the lenient one
# also flags merely small variances.
STRICT_THRESHOLD = 1e-4
LENIENT_THRESHOLD = 1e-2


def detect_improper(theta_hat: StartsParams, threshold: float) -> bool:
    """True when any variance parameter falls below ``threshold``.

    Only the four variance parameters (psi2, phi2, omega2, sigma1_2)
    participate; the autoregressive coefficient never does.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    smallest = min(
        theta_hat.psi2, theta_hat.phi2, theta_hat.omega2, theta_hat.sigma1_2
    )
    return smallest < threshold


def residual_corr(s: np.ndarray, sigma_hat: np.ndarray) -> np.ndarray:
    """Residual correlation matrix, observed-variance scaling on both sides.

    Both the observed and the implied covariance matrix are rescaled by the
    square roots of the observed variances, then differenced.  Because the
    implied matrix is scaled by the observed (not its own) variances, the
    diagonal is generally nonzero and reports relative variance misfit.
    """
    s = check_symmetric(s, rtol=1e-8, name="observed covariance")
    sigma_hat = check_symmetric(sigma_hat, rtol=1e-8, name="implied covariance")
    if s.shape != sigma_hat.shape:
        raise ValueError("observed and implied matrices differ in shape")
    d = np.diag(s)
    if np.any(d <= 0):
        raise ValueError("observed variances must all be positive")
    inv_sd = 1.0 / np.sqrt(d)
    scale = np.outer(inv_sd, inv_sd)
    return (s - sigma_hat) * scale


def srmr(s: np.ndarray, sigma_hat: np.ndarray) -> float:
    """Standardized root mean square residual.

    Root mean of the squared residual correlations.  The divisor counts the
    T(T+1)/2 unique covariance residuals plus the T mean residuals, which are
    identically zero for the centered data these models are fitted to; this
    matches how the index is conventionally reported for fits with a
    saturated mean structure.
    """
    resid = residual_corr(s, sigma_hat)
    t = resid.shape[0]
    rows, cols = np.tril_indices(t)
    n_terms = t * (t + 1) // 2 + t
    return float(np.sqrt(np.sum(resid[rows, cols] ** 2) / n_terms))


def bias_rmse(
    estimates: list[StartsParams], theta_true: StartsParams
) -> dict[str, tuple[float, float]]:
    """Per-parameter (bias, RMSE) of a batch of estimates against the truth.

    RMSE**2 equals bias**2 plus the population variance of the estimates.
    """
    if not estimates:
        raise ValueError("need at least one estimate")
    mat = np.array([e.to_array() for e in estimates])
    truth = theta_true.to_array()
    dev = mat - truth[None, :]
    bias = dev.mean(axis=0)
    rmse = np.sqrt((dev ** 2).mean(axis=0))
    return {
        name: (float(bias[i]), float(rmse[i]))
        for i, name in enumerate(PARAM_NAMES)
    }


def method_correlations(
    estimates_by_method: dict[str, list[StartsParams]],
    method_pair: tuple[str, str],
    parameter: str,
    threshold: float = STRICT_THRESHOLD,
) -> float:
    """Pearson correlation of two methods' estimates of one parameter.

    Replications where either method produced an improper solution (any
    variance below ``threshold``) are dropped first.  Returns NaN when either
    remaining series has zero variance (undefined correlation).
    """
    name_a, name_b = method_pair
    ests_a = estimates_by_method[name_a]
    ests_b = estimates_by_method[name_b]
    if len(ests_a) != len(ests_b):
        raise ValueError("methods have different replication counts")
    if parameter not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {parameter!r}")
    keep = [
        not (detect_improper(a, threshold) or detect_improper(b, threshold))
        for a, b in zip(ests_a, ests_b)
    ]
    x = np.array([getattr(a, parameter) for a, k in zip(ests_a, keep) if k])
    y = np.array([getattr(b, parameter) for b, k in zip(ests_b, keep) if k])
    if len(x) < 3:
        raise ValueError(
            f"need at least 3 jointly admissible replications, got {len(x)}"
        )
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


@dataclass
class BootstrapResult:
    """Bootstrap standard errors and the resampled estimates behind them."""

    se: dict[str, float]
    estimates: np.ndarray
    n_boot: int
    n_failed: int
    mode: str
    jitter: float
    local_starts: int


class BootstrapReliabilityError(RuntimeError):
    """Too many bootstrap refits failed; partial results are attached."""

    def __init__(self, message: str, partial: BootstrapResult):
        super().__init__(message)
        self.partial = partial


def _jittered_starts(theta_hat, local_starts, jitter, rng):
    center = theta_hat.to_array()
    sd = jitter * np.maximum(np.abs(center), 0.01)
    draws = center[None, :] + rng.normal(size=(local_starts, 5)) * sd[None, :]
    # variance slots clipped at zero so every start is admissible
    for j, name in enumerate(PARAM_NAMES):
        if name != "beta":
            draws[:, j] = np.maximum(draws[:, j], 0.0)
    return [StartsParams.from_array(row) for row in draws]


def bootstrap_se(
    fit_fn,
    theta_hat: StartsParams,
    *,
    data: np.ndarray | None = None,
    cov: np.ndarray | None = None,
    n_obs: int | None = None,
    n_boot: int = 200,
    local_starts: int = 20,
    jitter: float = 0.1,
    seed: int = 0,
    options=None,
    max_failure_rate: float = 0.2,
) -> BootstrapResult:
    """Bootstrap standard errors for any of the fit functions.

    With raw ``data`` (N x T), rows are resampled with replacement
    (nonparametric mode).  With only a covariance matrix and ``n_obs``,
    fresh samples are drawn from the fitted model's implied normal
    distribution (parametric mode).  Each resample is refitted with
    ``local_starts`` initial values jittered around ``theta_hat`` by Gaussian
    noise with standard deviation jitter * max(|theta_k|, 0.01); the reported
    standard errors are the standard deviations of the resampled estimates.

    Raises BootstrapReliabilityError (with partial results attached) when
    more than ``max_failure_rate`` of the refits fail.
    """
    from .model import implied_cov
    from .results import FitOptions
    from .simulate import sample_cov, simulate_rows

    if n_boot < 2:
        raise ValueError("need at least 2 bootstrap samples")
    if data is not None:
        data = np.asarray(data, dtype=float)
        n = data.shape[0]
        t = data.shape[1]
        mode = "nonparametric"
        chol = None
    else:
        if cov is None or n_obs is None:
            raise ValueError("supply raw data, or a covariance with n_obs")
        cov = check_symmetric(cov, rtol=1e-8, name="covariance")
        n = int(n_obs)
        t = cov.shape[0]
        mode = "parametric"
        sigma = implied_cov(theta_hat, t)
        chol = np.linalg.cholesky(sigma)

    base = options or FitOptions()
    opts = replace(base, n_starts=local_starts)
    children = np.random.SeedSequence(seed).spawn(n_boot)
    rows = []
    n_failed = 0
    for child in children:
        rng = np.random.default_rng(child)
        if mode == "nonparametric":
            idx = rng.integers(0, n, size=n)
            s_b = sample_cov(data[idx])
        else:
            s_b = sample_cov(simulate_rows(chol, n, rng))
        inits = _jittered_starts(theta_hat, local_starts, jitter, rng)
        try:
            fit = fit_fn(s_b, n, t, opts, inits)
        except Exception:
            n_failed += 1
            continue
        rows.append(fit.theta_hat.to_array())

    estimates = np.array(rows) if rows else np.empty((0, 5))
    if estimates.shape[0] >= 2:
        se_values = estimates.std(axis=0, ddof=1)
        se = {n_: float(se_values[i]) for i, n_ in enumerate(PARAM_NAMES)}
    else:
        se = {n_: float("nan") for n_ in PARAM_NAMES}
    result = BootstrapResult(
        se=se,
        estimates=estimates,
        n_boot=n_boot,
        n_failed=n_failed,
        mode=mode,
        jitter=jitter,
        local_starts=local_starts,
    )
    if n_failed > max_failure_rate * n_boot:
        raise BootstrapReliabilityError(
            f"{n_failed} of {n_boot} bootstrap refits failed", result
        )
    return result
