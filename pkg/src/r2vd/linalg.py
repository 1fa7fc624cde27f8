"""Dense linear-algebra primitives for the classical detectors.

Covariance estimation, SPD solves, symmetric eigendecomposition, and
empirical rank statistics. Backed by LAPACK via numpy/scipy; the
contracts (ridge regularization, descending eigenvalue order, averaged
tie ranks) are pinned here and exercised against independent oracles in
the test suite.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part of a square matrix in float64."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def mean_covariance(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and 1/N covariance of N spectra, ridge-regularized.

    The ridge delta = 1e-6 * trace(cov) / C (1e-12 for an all-constant
    sample) keeps the covariance invertible on cubes with flat regions.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValueError(f"expected an N x C array, got shape {pixels.shape}")
    n, c = pixels.shape
    if n < 2:
        raise ValueError(f"need at least 2 pixels to estimate covariance, got {n}")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = symmetrize(centered.T @ centered / n)
    trace = float(np.trace(cov))
    delta = 1e-6 * trace / c if trace > 0.0 else 1e-12
    cov[np.diag_indices(c)] += delta
    return mean, cov


def cholesky_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ y = b for symmetric positive-definite ``a``.

    ``b`` may be a vector or a C x M block of right-hand sides.
    """
    a = symmetrize(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: a is {a.shape}, b is {b.shape}")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as e:
        raise ValueError("matrix is not positive definite") from e
    from scipy.linalg import solve_triangular

    z = solve_triangular(lower, b, lower=True, check_finite=False)
    return solve_triangular(lower.T, z, lower=False, check_finite=False)


def sym_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = symmetrize(a)
    values, vectors = np.linalg.eigh(a)
    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order]


def empirical_rank(scores: np.ndarray) -> np.ndarray:
    """Ascending ranks (ties averaged) normalized by N, so output is in (0, 1].

    Invariant under any strictly increasing transform of the input.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty score array")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    flat = scores.ravel()
    ranks = rankdata(flat, method="average") / flat.size
    return ranks.reshape(scores.shape)
