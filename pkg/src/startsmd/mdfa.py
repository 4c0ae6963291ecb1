"""Two-stage matrix-decomposition estimator.

The estimator alternates three updates until the parameter vector settles or
the loss stops improving: (1) an eigendecomposition-based update of the
cross-covariance between the observations and the latent scores, (2) an inner
least-squares update of the within-person block (beta, sigma1_2, omega2)
against a target built from the residual cross-covariance block, and (3)
closed-form updates of the trait and error variances from arithmetic means.
Because the trait and error variances are squares of averages, and the
within-person scales are optimized as square roots, no variance estimate can
ever go negative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pure-numpy fallback, same results
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

from .diagnostics import detect_improper, LENIENT_THRESHOLD, STRICT_THRESHOLD
from .linalg import check_symmetric, sym_eigen, vech
from .model import PARAM_NAMES, StartsParams, build_loading_bundle
from .results import (
    CONVERGED_MAX_ITERS,
    CONVERGED_PARAM_TOL,
    CONVERGED_PATIENCE,
    FitFailureError,
    FitOptions,
    FitResult,
)

# Eigenvalues below this fraction of the largest are treated as zero when
# forming the pseudo-inverse square root.
EIGEN_KEEP_RTOL = 1e-12

# Losses within this margin count as ties; the earlier start then wins.
LOSS_TIE_TOL = 1e-12


class DegenerateInputError(ValueError):
    """The eigendecomposition update has no usable positive eigenvalue."""


class InnerOptimizationError(RuntimeError):
    """The inner least-squares update produced no finite loss.

    ``best_theta1`` holds the best (beta, sigma1_2, omega2) seen so far.
    """

    def __init__(self, message: str, best_theta1: tuple[float, float, float]):
        super().__init__(message)
        self.best_theta1 = best_theta1


@dataclass(frozen=True)
class CrossCov:
    """Partitioned cross-covariance between observations and latent scores.

    ``s_y_s`` (length T) is the trait column, ``s_y_r`` (T x T) the block for
    the within-person residual scores, and ``s_y_u`` (T x T) the block for the
    unique (error) scores.  Horizontal concatenation restores the full
    T x (2T+1) cross-covariance matrix.
    """

    s_y_s: np.ndarray
    s_y_r: np.ndarray
    s_y_u: np.ndarray

    def concat(self) -> np.ndarray:
        return np.hstack([self.s_y_s[:, None], self.s_y_r, self.s_y_u])


def cross_cov_matrix(s: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Eigendecomposition-based cross-covariance update, S B L Delta^-1 L'.

    L and Delta**2 come from the eigendecomposition of B' S B; only
    eigenvalues above EIGEN_KEEP_RTOL times the largest are retained, which
    makes the inverse square root a pseudo-inverse (B' S B has rank at most T
    while being (2T+1) square in the full model).
    """
    sb = s @ b
    g = b.T @ sb
    g = (g + g.T) / 2.0
    evals, evecs = sym_eigen(g)
    lam_max = evals[0]
    if not lam_max > 0.0:
        raise DegenerateInputError(
            "no positive eigenvalue in the cross-covariance update; "
            "the loading matrix or the target covariance is effectively zero"
        )
    keep = evals > EIGEN_KEEP_RTOL * lam_max
    ell = evecs[:, keep]
    inv_delta = 1.0 / np.sqrt(evals[keep])
    return sb @ (ell * inv_delta[None, :]) @ ell.T


def cross_cov_update(s: np.ndarray, b_tilde: np.ndarray) -> CrossCov:
    """Update the partitioned cross-covariance from the current loadings."""
    t = s.shape[0]
    if b_tilde.shape != (t, 2 * t + 1):
        raise ValueError(
            f"loading matrix must be {t} x {2 * t + 1}, got {b_tilde.shape}"
        )
    full = cross_cov_matrix(s, b_tilde)
    return CrossCov(
        s_y_s=full[:, 0], s_y_r=full[:, 1:t + 1], s_y_u=full[:, t + 1:]
    )


def theta2_update(cc: CrossCov) -> tuple[float, float]:
    """Closed-form trait and error variance updates.

    phi2 is the squared mean of the trait column and psi2 the squared mean of
    the error-block diagonal, so both are nonnegative by construction.
    """
    t = cc.s_y_s.shape[0]
    phi2 = float(np.mean(cc.s_y_s)) ** 2
    psi2 = (float(np.trace(cc.s_y_u)) / t) ** 2
    return phi2, psi2


def within_target(s_y_r: np.ndarray) -> np.ndarray:
    """Build the within-person covariance target from the residual block.

    Entries with residual index above the observation index are zero in
    population (an observation cannot covary with later innovations), so they
    are zeroed before forming S* = tri @ tri.T, which is symmetric PSD by
    construction.
    """
    tri = np.tril(s_y_r)
    return tri @ tri.T


def tsmdfa_loss(cc: CrossCov, b_tilde: np.ndarray, n_obs: int) -> float:
    """Decomposition loss: n_obs times the squared Frobenius distance."""
    diff = cc.concat() - b_tilde
    return float(n_obs * np.sum(diff * diff))


@lru_cache(maxsize=None)
def _profile_structure(t: int):
    """Cached vech index arrays for the profiled within-person criterion."""
    rows = np.concatenate([np.arange(j, t) for j in range(t)])
    cols = np.concatenate([np.full(t - j, j) for j in range(t)])
    return rows + cols, rows - cols, cols


# Coarse sweep of the autoregressive coefficient used to seed the profiled
# line search; the warm start and a bracketed refinement handle values
# outside this range.
_BETA_SWEEP = np.linspace(-0.98, 0.98, 99)


@njit(cache=True)
def _profile_point(beta, target, t, sum_idx, lag_idx, col_idx):
    """Scalar profiled fit at one beta: (loss, sigma1_2, omega2)."""
    n_pow = 2 * t - 1
    pw = np.empty(n_pow)
    pw[0] = 1.0
    for d in range(1, n_pow):
        pw[d] = pw[d - 1] * beta
    geo = np.zeros(t)
    for j in range(1, t):
        geo[j] = geo[j - 1] + pw[2 * (j - 1)]
    aa = 0.0
    ab = 0.0
    bb = 0.0
    at = 0.0
    bt = 0.0
    tt = 0.0
    for p in range(target.size):
        av = pw[sum_idx[p]]
        bv = pw[lag_idx[p]] * geo[col_idx[p]]
        tp = target[p]
        aa += av * av
        ab += av * bv
        bb += bv * bv
        at += av * tp
        bt += bv * tp
        tt += tp * tp
    det = aa * bb - ab * ab
    best_loss = np.inf
    best_s1 = 0.0
    best_w = 0.0
    if det > 0.0:
        x1 = (bb * at - ab * bt) / det
        x2 = (aa * bt - ab * at) / det
        if x1 >= 0.0 and x2 >= 0.0:
            loss = tt - 2.0 * (x1 * at + x2 * bt) + (
                x1 * x1 * aa + 2.0 * x1 * x2 * ab + x2 * x2 * bb
            )
            if np.isfinite(loss):
                best_loss = loss
                best_s1 = x1
                best_w = x2
    # boundary fits keep the scales nonnegative when the joint solution
    # leaves the quadrant (or the design is singular)
    x1_only = at / aa if aa > 0.0 and at > 0.0 else 0.0
    loss_a = tt - 2.0 * x1_only * at + x1_only * x1_only * aa
    if np.isfinite(loss_a) and loss_a < best_loss:
        best_loss = loss_a
        best_s1 = x1_only
        best_w = 0.0
    x2_only = bt / bb if bb > 0.0 and bt > 0.0 else 0.0
    loss_b = tt - 2.0 * x2_only * bt + x2_only * x2_only * bb
    if np.isfinite(loss_b) and loss_b < best_loss:
        best_loss = loss_b
        best_s1 = 0.0
        best_w = x2_only
    return best_loss, best_s1, best_w


@njit(cache=True)
def _profile_search(target, t, beta0, sweep, sum_idx, lag_idx, col_idx):
    """Coarse sweep plus warm start plus zooming refinement over beta.

    The refinement is confined to the near-stationary range covered by the
    sweep, so iterated updates cannot drift into extreme-coefficient
    representations the sweep never sampled.  A warm start outside that
    range still competes as a fixed candidate (the update never returns a
    worse fit than the warm start), it just is not refined further outward.
    """
    lo_lim = sweep[0] - 0.01
    hi_lim = sweep[-1] + 0.01
    best_loss = np.inf
    best_beta = beta0
    best_s1 = 0.0
    best_w = 0.0
    warm_off_grid = False
    for k in range(sweep.size):
        loss, s1, w = _profile_point(
            sweep[k], target, t, sum_idx, lag_idx, col_idx
        )
        if loss < best_loss:
            best_loss, best_beta, best_s1, best_w = loss, sweep[k], s1, w
            warm_off_grid = False
    loss0, s10, w0 = _profile_point(
        beta0, target, t, sum_idx, lag_idx, col_idx
    )
    if loss0 < best_loss:
        best_loss, best_beta, best_s1, best_w = loss0, beta0, s10, w0
        warm_off_grid = True
    spacing = sweep[1] - sweep[0]
    half = spacing
    if warm_off_grid:
        off_grid = abs(beta0) * 0.05
        if off_grid > spacing:
            half = off_grid
    lo = max(best_beta - half, lo_lim)
    hi = min(best_beta + half, hi_lim)
    while hi - lo > 1e-9:
        step = (hi - lo) / 8.0
        improved_at = best_beta
        for j in range(9):
            b = lo + step * j
            loss, s1, w = _profile_point(
                b, target, t, sum_idx, lag_idx, col_idx
            )
            if loss < best_loss:
                best_loss, best_beta, best_s1, best_w = loss, b, s1, w
                improved_at = b
        lo = max(improved_at - step, lo_lim)
        hi = min(improved_at + step, hi_lim)
    return best_loss, best_beta, best_s1, best_w


def theta1_update(
    s_star: np.ndarray,
    theta1_init: tuple[float, float, float],
    options: FitOptions | None = None,
) -> tuple[float, float, float]:
    """Inner least-squares update of the within-person block.

    Minimizes the squared distance between vech(S*) and the vech of the
    within-person covariance.  The two variance scales enter that distance
    linearly, so they are profiled out in closed form (kept nonnegative
    exactly) and only the autoregressive coefficient needs a line search,
    which combines a coarse sweep, the warm-start value and a bracketed
    refinement.  The achieved loss never exceeds the loss at the warm start,
    because the warm start competes as a candidate with its scales free to
    improve.
    """
    opts = options or FitOptions()
    s_star = np.asarray(s_star, dtype=float)
    t = s_star.shape[0]
    beta0, s1sq0, wsq0 = theta1_init
    if s1sq0 < 0 or wsq0 < 0:
        raise ValueError("warm-start variances must be nonnegative")
    target = vech(s_star)

    n_sweep = int(max(min(opts.inner_max_evals - 120, _BETA_SWEEP.size), 3))
    sweep = _BETA_SWEEP if n_sweep >= _BETA_SWEEP.size else np.linspace(
        -0.98, 0.98, n_sweep
    )
    sum_idx, lag_idx, col_idx = _profile_structure(t)
    loss, beta, s1sq, wsq = _profile_search(
        target, t, float(beta0), sweep, sum_idx, lag_idx, col_idx
    )
    if not np.isfinite(loss):
        raise InnerOptimizationError(
            "inner least-squares update found no finite loss",
            (float(beta), float(s1sq), float(wsq)),
        )
    return float(beta), float(s1sq), float(wsq)


_REASON_BY_CODE = {
    0: CONVERGED_MAX_ITERS,
    1: CONVERGED_PARAM_TOL,
    2: CONVERGED_PATIENCE,
}
_CODE_DEGENERATE = -1


@njit(cache=True)
def _b_tilde_jit(theta, t):
    """Loading concatenation [trait column | within block | error diag]."""
    b = np.zeros((t, 2 * t + 1))
    phi = np.sqrt(theta[1])
    psi = np.sqrt(theta[0])
    beta = theta[2]
    for i in range(t):
        b[i, 0] = phi
        b[i, t + 1 + i] = psi
    for k in range(t):
        sc = np.sqrt(theta[4]) if k == 0 else np.sqrt(theta[3])
        pw = sc
        for i in range(k, t):
            b[i, k + 1] = pw
            pw *= beta
    return b


@njit(cache=True)
def _run_start_jit(
    s, n_obs, t, theta0, max_iters, patience, param_tol,
    sweep, sum_idx, lag_idx, col_idx,
):
    """Compiled per-start iteration; mirrors the public operations.

    theta vectors use the canonical order (psi2, phi2, beta, omega2,
    sigma1_2).  Returns a negative reason code when the eigendecomposition
    update degenerates.
    """
    theta = theta0.copy()
    b = _b_tilde_jit(theta, t)
    best_loss = np.inf
    best_theta = theta.copy()
    trace = np.empty(max_iters)
    no_improve = 0
    reason = 0
    n_iters = 0
    n_vech = sum_idx.size
    target = np.empty(n_vech)
    for it in range(1, max_iters + 1):
        n_iters = it
        # eigendecomposition-based cross-covariance update at the current
        # parameters
        sb = s @ b
        bt = b.T.copy()
        g = bt @ sb
        g = (g + g.T) / 2.0
        evals, evecs = np.linalg.eigh(g)
        lam_max = evals[-1]
        if not lam_max > 0.0:
            return best_loss, best_theta, _CODE_DEGENERATE, it, trace[:it]
        n_keep = 0
        for j in range(evals.size):
            if evals[j] > EIGEN_KEEP_RTOL * lam_max:
                n_keep += 1
        ell = evecs[:, evals.size - n_keep:].copy()
        ell_t = ell.T.copy()
        scaled = ell.copy()
        for j in range(n_keep):
            scaled[:, j] /= np.sqrt(evals[evals.size - n_keep + j])
        syz = sb @ (scaled @ ell_t)

        # decomposition loss of the current parameter vector; collapsing
        # trajectories raise it, so patience cuts them and best-so-far keeps
        # the pre-collapse iterate
        loss = 0.0
        for i in range(t):
            for j in range(2 * t + 1):
                d = syz[i, j] - b[i, j]
                loss += d * d
        loss *= n_obs
        trace[it - 1] = loss

        if loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
            no_improve = 0
        else:
            no_improve += 1
        if no_improve >= patience:
            reason = 2
            break

        # within-person target from the residual block, lower triangle only
        tri = syz[:, 1:t + 1].copy()
        for i in range(t):
            for j in range(i + 1, t):
                tri[i, j] = 0.0
        tri_t = tri.T.copy()
        s_star = tri @ tri_t
        p = 0
        for j in range(t):
            for i in range(j, t):
                target[p] = s_star[i, j]
                p += 1

        loss1, beta, s1sq, wsq = _profile_search(
            target, t, theta[2], sweep, sum_idx, lag_idx, col_idx
        )
        if not np.isfinite(loss1):
            return best_loss, best_theta, -2, it, trace[:it]

        # closed-form trait and error variances
        mean_s = 0.0
        tr_u = 0.0
        for i in range(t):
            mean_s += syz[i, 0]
            tr_u += syz[i, t + 1 + i]
        phi2 = (mean_s / t) ** 2
        psi2 = (tr_u / t) ** 2

        new_theta = np.empty(5)
        new_theta[0] = psi2
        new_theta[1] = phi2
        new_theta[2] = beta
        new_theta[3] = wsq
        new_theta[4] = s1sq
        new_b = _b_tilde_jit(new_theta, t)

        delta = 0.0
        for j in range(5):
            dj = abs(new_theta[j] - theta[j])
            if dj > delta:
                delta = dj
        theta = new_theta
        b = new_b
        if delta < param_tol:
            reason = 1
            break
    return best_loss, best_theta, reason, n_iters, trace[:n_iters]


def _run_start(
    s: np.ndarray, n_obs: int, t: int, opts: FitOptions, theta0: StartsParams
):
    """One multi-start replicate; returns the best-so-far iterate."""
    if HAVE_NUMBA:
        sum_idx, lag_idx, col_idx = _profile_structure(t)
        n_sweep = int(
            max(min(opts.inner_max_evals - 120, _BETA_SWEEP.size), 3)
        )
        sweep = _BETA_SWEEP if n_sweep >= _BETA_SWEEP.size else np.linspace(
            -1.2, 1.2, n_sweep
        )
        loss, theta_vec, code, n_iters, trace = _run_start_jit(
            s, n_obs, t, theta0.to_array(), opts.max_iters, opts.patience,
            opts.param_tol, sweep, sum_idx, lag_idx, col_idx,
        )
        if code == _CODE_DEGENERATE:
            raise DegenerateInputError(
                "no positive eigenvalue in the cross-covariance update"
            )
        if code == -2:
            raise InnerOptimizationError(
                "inner least-squares update found no finite loss",
                (float(theta_vec[2]), float(theta_vec[4]),
                 float(theta_vec[3])),
            )
        return (loss, StartsParams.from_array(theta_vec),
                _REASON_BY_CODE[code], n_iters, trace)

    theta = theta0
    b_tilde = build_loading_bundle(theta, t).b_tilde
    best_loss = np.inf
    best_theta = theta0
    trace = []
    no_improve = 0
    reason = CONVERGED_MAX_ITERS
    n_iters = 0
    for n_iters in range(1, opts.max_iters + 1):
        cc = cross_cov_update(s, b_tilde)
        loss = tsmdfa_loss(cc, b_tilde, n_obs)
        trace.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_theta = theta
            no_improve = 0
        else:
            no_improve += 1
        if no_improve >= opts.patience:
            reason = CONVERGED_PATIENCE
            break
        beta, s1sq, wsq = theta1_update(
            within_target(cc.s_y_r), theta.theta1, opts
        )
        phi2, psi2 = theta2_update(cc)
        new_theta = StartsParams(
            psi2=psi2, phi2=phi2, beta=beta, omega2=wsq, sigma1_2=s1sq
        )
        delta = max(
            abs(getattr(new_theta, n) - getattr(theta, n))
            for n in PARAM_NAMES
        )
        theta = new_theta
        b_tilde = build_loading_bundle(new_theta, t).b_tilde
        if delta < opts.param_tol:
            reason = CONVERGED_PARAM_TOL
            break
    return best_loss, best_theta, reason, n_iters, np.asarray(trace)


def _validate_fit_inputs(s, n_obs, t, opts, initial_values):
    s = check_symmetric(s, rtol=1e-8, name="sample covariance")
    if s.shape[0] != t:
        raise ValueError(f"covariance is {s.shape[0]} x {s.shape[0]}, t={t}")
    if t < 4:
        raise ValueError(f"the model is identified only for t >= 4, got {t}")
    if n_obs < 1:
        raise ValueError("n_obs must be positive")
    if initial_values is not None and len(initial_values) != opts.n_starts:
        raise ValueError(
            f"got {len(initial_values)} initial values for "
            f"{opts.n_starts} starts"
        )
    return (s + s.T) / 2.0


def _draw_default_initial_values(opts: FitOptions) -> list[StartsParams]:
    from .simulate import STUDY_INITIAL_DISTS, draw_initial_values

    return draw_initial_values(
        STUDY_INITIAL_DISTS, opts.n_starts, seed=opts.rng_seed
    )


def fit_tsmdfa(
    s: np.ndarray,
    n_obs: int,
    t: int,
    options: FitOptions | None = None,
    initial_values: list[StartsParams] | None = None,
) -> FitResult:
    """Fit the model by the two-stage matrix-decomposition procedure.

    Runs the alternating update from each initial value and keeps, within
    each start, the iterate with the smallest loss seen; across starts the
    smallest loss wins, with ties (within 1e-12) resolved toward the lowest
    start index.  The run is deterministic given the covariance, options and
    initial values (or the seed used to draw them).

    Parameters
    ----------
    s : ndarray
        Sample covariance matrix (unbiased divisor), symmetric, T x T.
    n_obs : int
        Number of observations behind ``s``; scales the loss.
    t : int
        Number of time points (at least 4 for identification).
    options : FitOptions, optional
    initial_values : list of StartsParams, optional
        One per start.  Drawn from the study initial-value distributions
        seeded by ``options.rng_seed`` when omitted.
    """
    opts = options or FitOptions()
    s = _validate_fit_inputs(s, n_obs, t, opts, initial_values)
    if np.max(np.abs(s)) == 0.0:
        raise DegenerateInputError("sample covariance is identically zero")
    if initial_values is None:
        initial_values = _draw_default_initial_values(opts)

    t0 = time.perf_counter()
    winner = None
    errors: list[str] = []
    for m, theta0 in enumerate(initial_values):
        try:
            loss, theta, reason, n_iters, trace = _run_start(
                s, n_obs, t, opts, theta0
            )
        except (DegenerateInputError, InnerOptimizationError, ValueError) as e:
            errors.append(f"start {m}: {e}")
            continue
        if theta is None or not np.isfinite(loss):
            errors.append(f"start {m}: no finite loss")
            continue
        if winner is None or loss < winner[0] - LOSS_TIE_TOL:
            winner = (loss, theta, reason, n_iters, m, trace)
    if winner is None:
        raise FitFailureError(
            "all starts of the two-stage fit failed", errors
        )
    loss, theta, reason, n_iters, m, trace = winner
    return FitResult(
        theta_hat=theta,
        loss=loss,
        converged=reason,
        n_iters=n_iters,
        start_index=m,
        improper_strict=detect_improper(theta, STRICT_THRESHOLD),
        improper_lenient=detect_improper(theta, LENIENT_THRESHOLD),
        elapsed=time.perf_counter() - t0,
        trace=trace,
        method="tsmdfa",
        n_starts=opts.n_starts,
    )
