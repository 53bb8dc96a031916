"""Seeded random streams, minimum-norm least squares, and covariance spectra.

All heavy lifting is delegated to LAPACK through NumPy/SciPy; this module
pins down the exact conventions the rest of the package relies on
(rank tolerance, eigenvalue ordering, sample covariance normalization,
reproducible generator construction).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "make_rng",
    "split_rng",
    "rng_uniform",
    "rng_normal",
    "lstsq_minnorm",
    "covariance",
    "sym_eig_desc",
]


def make_rng(seed):
    """Return a ``numpy.random.Generator`` seeded deterministically from ``seed``.

    The same integer always yields the same stream, independent of global
    NumPy state.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_rng(seed, n):
    """Spawn ``n`` statistically independent generators from one master seed.

    Children are derived with ``SeedSequence.spawn`` so ensemble members do
    not overlap and the split is reproducible.
    """
    if n < 1:
        raise ValueError("number of child streams must be positive")
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def rng_uniform(rng, lo, hi, shape):
    """Draw a float64 array of the given shape uniformly from [lo, hi)."""
    if not lo < hi:
        raise ValueError(f"uniform bounds must satisfy lo < hi, got [{lo}, {hi})")
    return rng.uniform(lo, hi, size=shape)


def rng_normal(rng, shape):
    """Draw a float64 array of the given shape from the standard normal."""
    return rng.standard_normal(size=shape)


def lstsq_minnorm(A, B, rank_tol=None):
    """Minimum-norm least-squares solution of ``A @ X = B``.

    Solved through the SVD (LAPACK ``gelsd``): singular values
    ``sigma_i <= rank_tol * sigma_max`` are treated as zero, which makes the
    solve well defined for rank-deficient and over/under-determined systems
    and returns the solution of smallest Frobenius norm.

    Parameters
    ----------
    A : (N, w) array_like
    B : (N,) or (N, m) array_like
    rank_tol : float, optional
        Relative singular-value cutoff; defaults to ``max(N, w) * eps`` for
        float64.

    Returns
    -------
    X : (w,) or (w, m) ndarray, matching the dimensionality of ``B``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"A must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"A must be non-empty, got shape {A.shape}")
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise ValueError(
            f"B rows must match A rows: A is {A.shape}, B is {B.shape}"
        )
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)):
        raise ValueError("least-squares system contains non-finite entries")
    if rank_tol is None:
        rank_tol = max(A.shape) * np.finfo(np.float64).eps
    X, _, _, _ = scipy.linalg.lstsq(
        A, B, cond=rank_tol, lapack_driver="gelsd", check_finite=False
    )
    return X[:, 0] if squeeze else X


def covariance(X):
    """Sample covariance (ddof=1) of row-sample data ``X`` of shape (N, w).

    The result is symmetrized to kill round-off asymmetry so it can be fed
    straight into :func:`sym_eig_desc`.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D (samples x features), got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise ValueError("covariance requires at least two samples")
    Xc = X - X.mean(axis=0)
    C = (Xc.T @ Xc) / (n - 1)
    return 0.5 * (C + C.T)


def sym_eig_desc(C, return_vectors=False):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Raises ``ValueError`` if ``C`` is not square or not symmetric to within
    a relative tolerance of 1e-12.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"C must be square, got shape {C.shape}")
    scale = np.max(np.abs(C)) if C.size else 0.0
    if scale > 0 and np.max(np.abs(C - C.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(C)
    vals = vals[::-1].copy()
    if return_vectors:
        return vals, vecs[:, ::-1].copy()
    return vals
