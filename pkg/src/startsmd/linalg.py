"""Dense symmetric-matrix helpers: vech, eigendecomposition, Cholesky."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

SYMMETRY_RTOL = 1e-12


def check_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL,
                    name: str = "matrix") -> np.ndarray:
    """Validate a square symmetric matrix and return it as a float array.

    Symmetry is relative: max |M - M.T| must not exceed rtol * max |M|
    (with an absolute floor of rtol for the all-zero matrix).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = np.max(np.abs(m))
    if np.max(np.abs(m - m.T)) > rtol * max(scale, 1.0):
        raise ValueError(f"{name} is not symmetric within tolerance {rtol}")
    return m


@lru_cache(maxsize=None)
def _vech_indices(t: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) indices of the lower triangle in column-stacked order."""
    rows = np.concatenate([np.arange(j, t) for j in range(t)])
    cols = np.concatenate([np.full(t - j, j) for j in range(t)])
    return rows, cols


def vech(m: np.ndarray) -> np.ndarray:
    """Half-vectorization: stack the lower triangle column by column.

    For each column j the entries (j, j), (j+1, j), ..., (T-1, j) are taken
    in order, giving a vector of length T(T+1)/2.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"vech requires a square matrix, got shape {m.shape}")
    rows, cols = _vech_indices(m.shape[0])
    return m[rows, cols]


def sym_eigen(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, deterministically oriented.

    Returns eigenvalues sorted descending and the matching orthonormal
    eigenvectors as columns.  Each eigenvector is flipped so that its
    largest-magnitude component is nonnegative, which makes repeated runs
    bit-reproducible.
    """
    m = check_symmetric(m)
    evals, evecs = np.linalg.eigh(m)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    lead = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[lead, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evals, evecs * signs


def cholesky_pd(m: np.ndarray) -> np.ndarray | None:
    """Lower Cholesky factor of a symmetric matrix, or None if not PD."""
    m = check_symmetric(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None
