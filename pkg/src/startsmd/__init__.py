"""Trait/state/error decomposition of longitudinal panels.

A numpy/scipy library for fitting the five-parameter stable-trait plus
autoregressive-deviation plus measurement-error covariance structure to
panel data, featuring an eigendecomposition-based two-stage estimator that
cannot produce negative variance estimates, conventional ML / constrained-ML
/ ULS comparators, a seeded Monte Carlo study harness, residual fit
diagnostics and bootstrap standard errors.
"""

from .diagnostics import (
    BootstrapReliabilityError,
    BootstrapResult,
    LENIENT_THRESHOLD,
    STRICT_THRESHOLD,
    bias_rmse,
    bootstrap_se,
    detect_improper,
    method_correlations,
    residual_corr,
    srmr,
)
from .estimators import (
    fit_cml,
    fit_ml,
    fit_uls,
    ml_discrepancy,
    ml_standard_errors,
    numeric_hessian,
    uls_discrepancy,
)
from .linalg import check_symmetric, cholesky_pd, sym_eigen, vech
from .mdfa import (
    CrossCov,
    DegenerateInputError,
    InnerOptimizationError,
    cross_cov_matrix,
    cross_cov_update,
    fit_tsmdfa,
    theta1_update,
    theta2_update,
    tsmdfa_loss,
    within_target,
)
from .model import (
    LoadingBundle,
    PARAM_NAMES,
    StartsParams,
    build_gamma,
    build_loading_bundle,
    implied_cov,
    within_cov,
)
from .results import FitFailureError, FitOptions, FitResult
from .simulate import (
    FIT_INITIAL_DISTS,
    ParamDistributions,
    STUDY_INITIAL_DISTS,
    SimConfig,
    draw_initial_values,
    gen_dataset,
    sample_cov,
    write_dataset_csv,
)
from .study import StudyConfig, StudySummary, paper_study_config, run_study

FIT_FUNCTIONS = {
    "ml": fit_ml,
    "cml": fit_cml,
    "uls": fit_uls,
    "tsmdfa": fit_tsmdfa,
}

__all__ = [
    "BootstrapReliabilityError",
    "BootstrapResult",
    "CrossCov",
    "DegenerateInputError",
    "FIT_FUNCTIONS",
    "FIT_INITIAL_DISTS",
    "FitFailureError",
    "FitOptions",
    "FitResult",
    "InnerOptimizationError",
    "LENIENT_THRESHOLD",
    "LoadingBundle",
    "PARAM_NAMES",
    "ParamDistributions",
    "STRICT_THRESHOLD",
    "STUDY_INITIAL_DISTS",
    "SimConfig",
    "StartsParams",
    "StudyConfig",
    "StudySummary",
    "bias_rmse",
    "bootstrap_se",
    "build_gamma",
    "build_loading_bundle",
    "check_symmetric",
    "cholesky_pd",
    "cross_cov_matrix",
    "cross_cov_update",
    "detect_improper",
    "draw_initial_values",
    "fit_cml",
    "fit_ml",
    "fit_tsmdfa",
    "fit_uls",
    "gen_dataset",
    "implied_cov",
    "method_correlations",
    "ml_discrepancy",
    "ml_standard_errors",
    "numeric_hessian",
    "paper_study_config",
    "residual_corr",
    "run_study",
    "sample_cov",
    "srmr",
    "sym_eigen",
    "theta1_update",
    "theta2_update",
    "tsmdfa_loss",
    "uls_discrepancy",
    "vech",
    "within_cov",
    "within_target",
    "write_dataset_csv",
]
