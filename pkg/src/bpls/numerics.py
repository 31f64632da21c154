"""Dense SPD linear algebra used by the fitter and the log-determinant terms.

All routines accept either a single ``(q, q)`` matrix or, for the ``*_batch``
variants, a stack ``(B, q, q)``.  A matrix counts as positive definite only if
every Cholesky pivot exceeds :data:`PIVOT_TOL`.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

PIVOT_TOL = 1e-12


def as_spd(m) -> np.ndarray:
    """Validate a symmetric, finite square matrix and return it as float array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not symmetric")
    return a


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefinite
        If any pivot is ``<= PIVOT_TOL``.
    """
    a = as_spd(m)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if a.shape[0] and np.min(np.diag(chol)) ** 2 <= PIVOT_TOL:
        raise NotPositiveDefinite("pivot below tolerance")
    return chol


def log_det_spd(m) -> float:
    chol = cholesky(m)
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def solve_spd(m, b) -> np.ndarray:
    chol = cholesky(m)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != chol.shape[0]:
        raise ValueError("dimension mismatch between matrix and right-hand side")
    y = solve_triangular(chol, b, lower=True)
    return solve_triangular(chol.T, y, lower=False)


def _cholesky_columns(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # column-by-column factorization vectorized over the batch axis
    n_b, q, _ = stack.shape
    chol = np.zeros_like(stack)
    ok = np.ones(n_b, dtype=bool)
    for j in range(q):
        row = chol[:, j, :j]
        pivot = stack[:, j, j] - np.einsum("bk,bk->b", row, row)
        bad = pivot <= PIVOT_TOL
        ok &= ~bad
        root = np.sqrt(np.where(bad, 1.0, pivot))
        chol[:, j, j] = root
        if j + 1 < q:
            below = stack[:, j + 1:, j] - np.einsum("bik,bk->bi", chol[:, j + 1:, :j], row)
            chol[:, j + 1:, j] = below / root[:, None]
    return chol, ok


def cholesky_batch(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor a ``(B, q, q)`` stack; returns ``(L, ok)``.

    ``ok[b]`` is False where matrix ``b`` is not positive definite; the
    corresponding slice of ``L`` is NaN.  Inputs are assumed symmetric.
    """
    stack = np.asarray(stack, dtype=float)
    if stack.shape[0] == 0 or stack.shape[-1] == 0:
        return stack.copy(), np.ones(stack.shape[0], dtype=bool)
    try:
        chol = np.linalg.cholesky(stack)
        diag = np.diagonal(chol, axis1=-2, axis2=-1)
        ok = np.min(diag, axis=1) ** 2 > PIVOT_TOL
    except np.linalg.LinAlgError:
        chol, ok = _cholesky_columns(stack)
    chol[~ok] = np.nan
    return chol, ok


def log_det_from_cholesky(chol: np.ndarray) -> np.ndarray:
    """``2 * sum(log(diag(L)))`` over the trailing two axes."""
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
