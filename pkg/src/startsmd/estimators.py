"""Covariance-structure comparator estimators: ML, constrained ML, ULS."""

from __future__ import annotations

import time
import warnings

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .diagnostics import detect_improper, LENIENT_THRESHOLD, STRICT_THRESHOLD
from .linalg import check_symmetric, vech
from .mdfa import _draw_default_initial_values, _validate_fit_inputs
from .model import StartsParams, implied_cov
from .results import (
    CONVERGED_MAX_ITERS,
    CONVERGED_PARAM_TOL,
    FitFailureError,
    FitOptions,
    FitResult,
)

# Finite penalty returned when the implied covariance is not positive
# definite, plus a slope term so optimizers retreat toward the PD region.
NONPD_PENALTY = 1e10

_NM_MAXFEV = 700
_REFINE_REL_STEP = 1e-6


def _theta_from_vec(vec: np.ndarray) -> StartsParams:
    return StartsParams(
        psi2=float(vec[0]),
        phi2=float(vec[1]),
        beta=float(vec[2]),
        omega2=float(vec[3]),
        sigma1_2=float(vec[4]),
    )


def _ml_value(s: np.ndarray, logdet_s: float, theta: StartsParams,
              t: int) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        sigma = implied_cov(theta, t)
    if not np.all(np.isfinite(sigma)):
        return 1e12
    try:
        cho = cho_factor(sigma, lower=True)
    except np.linalg.LinAlgError:
        return NONPD_PENALTY - float(np.linalg.eigvalsh(sigma)[0])
    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    tr = float(np.trace(cho_solve(cho, s)))
    return tr - (logdet_s - logdet_sigma) - t


def ml_discrepancy(s: np.ndarray, theta: StartsParams) -> float:
    """Maximum-likelihood fit function tr(S Sigma^-1) - log|S Sigma^-1| - T.

    Zero exactly when the implied covariance equals ``s`` and positive
    otherwise.  When the implied covariance is not positive definite, a large
    finite penalty (1e10 plus the magnitude of the most negative eigenvalue)
    is returned so that numerical optimizers retreat instead of crashing.
    Requires a nonsingular ``s``.
    """
    s = check_symmetric(s, rtol=1e-8, name="sample covariance")
    sign, logdet_s = np.linalg.slogdet(s)
    if sign <= 0:
        raise ValueError("sample covariance is singular; the ML fit "
                         "function is undefined")
    return _ml_value(s, float(logdet_s), theta, s.shape[0])


def uls_discrepancy(s: np.ndarray, theta: StartsParams) -> float:
    """Unweighted least-squares discrepancy on the unique elements."""
    s = check_symmetric(s, rtol=1e-8, name="sample covariance")
    resid = vech(s) - vech(implied_cov(theta, s.shape[0]))
    return float(resid @ resid)


def _minimize_unconstrained(objective, x0: np.ndarray):
    """Simplex search refined by quasi-Newton with numeric gradients."""
    res_nm = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxfev": _NM_MAXFEV, "xatol": 1e-6, "fatol": 1e-10},
    )
    best = res_nm
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res_qn = minimize(
            objective,
            res_nm.x,
            method="BFGS",
            jac="3-point",
            options={
                "gtol": 1e-7,
                "maxiter": 200,
                "finite_diff_rel_step": _REFINE_REL_STEP,
            },
        )
    if np.isfinite(res_qn.fun) and res_qn.fun < best.fun:
        best = res_qn
    n_iters = int(res_nm.nit) + int(res_qn.nit)
    success = bool(res_nm.success or res_qn.success)
    return best.x, float(best.fun), n_iters, success


def _minimize_bounded(objective, x0: np.ndarray, bounds):
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    x0 = np.clip(x0, lo, hi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = minimize(
            objective,
            x0,
            method="L-BFGS-B",
            jac="3-point",
            bounds=bounds,
            options={
                "maxiter": 500,
                "ftol": 1e-14,
                "gtol": 1e-10,
                "finite_diff_rel_step": _REFINE_REL_STEP,
            },
        )
    return res.x, float(res.fun), int(res.nit), bool(res.success)


def _multi_start_fit(
    s, n_obs, t, opts, initial_values, objective_for, optimizer, method_name
) -> FitResult:
    t0 = time.perf_counter()
    winner = None
    errors = []
    for m, theta0 in enumerate(initial_values):
        x0 = theta0.to_array()
        try:
            x, fun, n_iters, success = optimizer(objective_for, x0)
        except (ValueError, np.linalg.LinAlgError) as e:
            errors.append(f"start {m}: {e}")
            continue
        if not np.isfinite(fun):
            errors.append(f"start {m}: non-finite loss")
            continue
        if winner is None or fun < winner[1] - 1e-12:
            winner = (x, fun, n_iters, success, m)
    if winner is None:
        raise FitFailureError(f"all {method_name} starts failed", errors)
    x, fun, n_iters, success, m = winner
    theta = _theta_from_vec(x)
    return FitResult(
        theta_hat=theta,
        loss=fun,
        converged=CONVERGED_PARAM_TOL if success else CONVERGED_MAX_ITERS,
        n_iters=n_iters,
        start_index=m,
        improper_strict=detect_improper(theta, STRICT_THRESHOLD),
        improper_lenient=detect_improper(theta, LENIENT_THRESHOLD),
        elapsed=time.perf_counter() - t0,
        trace=None,
        method=method_name,
        n_starts=len(initial_values),
    )


def _prepare(s, n_obs, t, options, initial_values):
    opts = options or FitOptions()
    s = _validate_fit_inputs(s, n_obs, t, opts, initial_values)
    if initial_values is None:
        initial_values = _draw_default_initial_values(opts)
    return s, opts, initial_values


def fit_ml(
    s: np.ndarray,
    n_obs: int,
    t: int,
    options: FitOptions | None = None,
    initial_values: list[StartsParams] | None = None,
) -> FitResult:
    """Multi-start unconstrained ML fit.

    Variances are left unconstrained so that inadmissible (negative-variance)
    optima remain observable; the reported loss is the ML discrepancy at the
    best start's estimate.
    """
    s, opts, initial_values = _prepare(s, n_obs, t, options, initial_values)
    sign, logdet_s = np.linalg.slogdet(s)
    if sign <= 0:
        raise ValueError("sample covariance is singular")

    def objective(x):
        return _ml_value(s, float(logdet_s), _theta_from_vec(x), t)

    return _multi_start_fit(
        s, n_obs, t, opts, initial_values, objective,
        _minimize_unconstrained, "ml",
    )


def fit_cml(
    s: np.ndarray,
    n_obs: int,
    t: int,
    options: FitOptions | None = None,
    initial_values: list[StartsParams] | None = None,
) -> FitResult:
    """Constrained ML fit: variance parameters bounded below by zero.

    Estimates that hit the boundary are reported exactly (for example an
    error variance of exactly 0.0).
    """
    s, opts, initial_values = _prepare(s, n_obs, t, options, initial_values)
    sign, logdet_s = np.linalg.slogdet(s)
    if sign <= 0:
        raise ValueError("sample covariance is singular")

    def objective(x):
        return _ml_value(s, float(logdet_s), _theta_from_vec(x), t)

    bounds = [(0.0, None), (0.0, None), (None, None), (0.0, None), (0.0, None)]

    def optimizer(obj, x0):
        return _minimize_bounded(obj, x0, bounds)

    return _multi_start_fit(
        s, n_obs, t, opts, initial_values, objective, optimizer, "cml",
    )


def fit_uls(
    s: np.ndarray,
    n_obs: int,
    t: int,
    options: FitOptions | None = None,
    initial_values: list[StartsParams] | None = None,
) -> FitResult:
    """Multi-start unweighted least-squares fit, variances unconstrained."""
    s, opts, initial_values = _prepare(s, n_obs, t, options, initial_values)
    s_vech = vech(s)

    def objective(x):
        with np.errstate(over="ignore", invalid="ignore"):
            resid = s_vech - vech(implied_cov(_theta_from_vec(x), t))
            value = float(resid @ resid)
        return value if np.isfinite(value) else 1e12

    return _multi_start_fit(
        s, n_obs, t, opts, initial_values, objective,
        _minimize_unconstrained, "uls",
    )


def numeric_hessian(f, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian with per-coordinate relative steps.

    Steps are rel_step * max(|x_i|, 1), which keeps the second differences
    well above roundoff for the loss scales seen here.  Exact (to roundoff)
    for quadratic functions.
    """
    x = np.asarray(x, dtype=float)
    k = x.size
    h = rel_step * np.maximum(np.abs(x), 1.0)
    hess = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                f(x + ei + ej) - f(x + ei - ej)
                - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    if not np.all(np.isfinite(hess)):
        raise FloatingPointError(
            "non-finite entries in the numeric Hessian"
        )
    return hess


def ml_standard_errors(
    s: np.ndarray, n_obs: int, theta_hat: StartsParams,
    rel_step: float = 1e-5,
) -> dict[str, float]:
    """Observed-information standard errors for an interior ML optimum.

    The information matrix is the numeric Hessian of n/2 times the ML
    discrepancy at ``theta_hat``; standard errors are the square roots of the
    diagonal of its inverse.  A singular or non-positive information matrix
    yields NaN entries rather than an exception, mirroring how boundary or
    ill-conditioned solutions are reported.
    """
    s = check_symmetric(s, rtol=1e-8, name="sample covariance")
    t = s.shape[0]
    sign, logdet_s = np.linalg.slogdet(s)
    if sign <= 0:
        raise ValueError("sample covariance is singular")

    def g(x):
        return 0.5 * n_obs * _ml_value(s, float(logdet_s),
                                       _theta_from_vec(x), t)

    hess = numeric_hessian(g, theta_hat.to_array(), rel_step)
    names = ("psi2", "phi2", "beta", "omega2", "sigma1_2")
    try:
        cov = np.linalg.inv(hess)
        diag = np.diag(cov)
        if np.any(diag <= 0):
            raise np.linalg.LinAlgError
        se = np.sqrt(diag)
    except np.linalg.LinAlgError:
        se = np.full(5, np.nan)
    return {name: float(se[i]) for i, name in enumerate(names)}
