"""Vectorisation helpers for symmetric matrices.

All vectorisations are column-major: ``vec`` stacks columns and ``vech``
stacks the on-and-below-diagonal part of each column.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def vech_indices(n):
    """Row and column indices of the ``vech`` entries, in order."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows, dtype=np.intp)
    cols = np.array(cols, dtype=np.intp)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def vech(A, check=True):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"vech expects a square matrix, got shape {A.shape}")
    if check and A.size and np.max(np.abs(A - A.T)) > 1e-12 * max(1.0, np.max(np.abs(A))):
        raise ValueError("vech expects a symmetric matrix")
    rows, cols = vech_indices(A.shape[0])
    return A[rows, cols]


def vec(A):
    return np.asarray(A, dtype=float).ravel(order="F")


def unvech(v, n):
    v = np.asarray(v, dtype=float)
    k = n * (n + 1) // 2
    if v.shape != (k,):
        raise ValueError(f"unvech({n}) expects a vector of length {k}, got shape {v.shape}")
    rows, cols = vech_indices(n)
    A = np.empty((n, n))
    A[rows, cols] = v
    A[cols, rows] = v
    return A


def duplication(n):
    """Duplication matrix ``D`` with ``vec(A) = D @ vech(A)`` for symmetric ``A``."""
    if n < 1:
        raise ValueError("n must be positive")
    rows, cols = vech_indices(n)
    D = np.zeros((n * n, len(rows)))
    k = np.arange(len(rows))
    D[rows + cols * n, k] = 1.0
    D[cols + rows * n, k] = 1.0
    return D


def diag_selector(n):
    """``n^2 x n`` matrix ``R`` with ``vec(diag(v)) = R @ v``."""
    if n < 1:
        raise ValueError("n must be positive")
    R = np.zeros((n * n, n))
    R[np.arange(n) * (n + 1), np.arange(n)] = 1.0
    return R


@lru_cache(maxsize=64)
def vech_multiplicity(n):
    """``D^T vec(S) = multiplicity * vech(S)``: 1 on the diagonal, 2 off it."""
    rows, cols = vech_indices(n)
    mult = np.where(rows == cols, 1.0, 2.0)
    mult.flags.writeable = False
    return mult


def dup_sandwich(X, n):
    """``D^T X D`` for an ``n^2 x n^2`` matrix ``X`` without forming ``D``."""
    rows, cols = vech_indices(n)
    i1 = rows + cols * n
    i2 = cols + rows * n
    off = rows != cols
    Y = X[:, i1].copy()
    Y[:, off] += X[:, i2[off]]
    Z = Y[i1, :].copy()
    Z[off, :] += Y[i2[off], :]
    return Z


def svec_scale(n):
    """Scaling that maps ``vech`` to ``svec``: off-diagonal entries times sqrt(2).

    In ``svec`` coordinates the Euclidean norm equals the Frobenius norm of
    the symmetric matrix.
    """
    rows, cols = vech_indices(n)
    return np.where(rows == cols, 1.0, np.sqrt(2.0))
