"""Shared fit configuration and result containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import StartsParams

CONVERGED_PARAM_TOL = "param-tolerance"
CONVERGED_PATIENCE = "patience-stop"
CONVERGED_MAX_ITERS = "max-iters"


@dataclass(frozen=True)
class FitOptions:
    """Knobs shared by the multi-start estimators.

    ``patience`` and ``param_tol`` control the two-stage iteration: stop when
    every parameter moves less than ``param_tol`` between iterations, or when
    the loss has not improved for ``patience`` consecutive iterations.  The
    inner least-squares update gets ``inner_max_evals`` objective evaluations
    per call (simplex with one restart).  ``rng_seed`` seeds initial-value
    draws when no explicit initial values are supplied.
    """

    n_starts: int = 20
    patience: int = 10
    param_tol: float = 1e-6
    max_iters: int = 500
    rng_seed: int = 0
    inner_max_evals: int = 500
    inner_xtol: float = 1e-9
    inner_ftol: float = 1e-12

    def __post_init__(self):
        if self.n_starts < 1 or self.patience < 1 or self.max_iters < 1:
            raise ValueError("counts must be at least 1")
        if self.inner_max_evals < 1:
            raise ValueError("inner_max_evals must be at least 1")
        if self.param_tol <= 0 or self.inner_xtol <= 0 or self.inner_ftol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class FitResult:
    """Outcome of a multi-start fit.

    ``loss`` is the criterion value at ``theta_hat`` (the decomposition loss
    for the two-stage estimator, the discrepancy for ML/CML/ULS); it always
    equals the smallest loss seen across all starts and iterations.
    ``converged`` is one of 'param-tolerance', 'patience-stop' or 'max-iters'
    and describes the winning start.  ``elapsed`` (wall-clock seconds) is the
    one field excluded from the seed-determinism contract.  ``trace`` holds
    the winning start's per-iteration loss sequence where the estimator
    iterates (None for the one-shot optimizers).
    """

    theta_hat: StartsParams
    loss: float
    converged: str
    n_iters: int
    start_index: int
    improper_strict: bool
    improper_lenient: bool
    elapsed: float
    trace: np.ndarray | None = None
    method: str = ""
    n_starts: int = 0

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise ValueError(f"fit loss must be finite, got {self.loss}")


class FitFailureError(RuntimeError):
    """Every start of a multi-start fit failed.

    Carries the per-start error messages in ``per_start``.
    """

    def __init__(self, message: str, per_start: list[str]):
        super().__init__(message)
        self.per_start = per_start
