# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: cyclic Jacobi eigensolver, PSD-floor projection, Dykstra.

Same surface as ``coco._fallback``. Inside ``project_dsy`` successive PSD
steps see nearby matrices, so each Jacobi call starts from the previous
eigenbasis and usually converges in one or two sweeps.
"""

import numpy as np

from libc.math cimport sqrt, fabs, copysign
from libc.stdlib cimport malloc, free

from .errors import NumericalError, ProjectionError

BACKEND = "compiled"


cdef double _fro(double[:, ::1] a, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            s += a[i, j] * a[i, j]
    return sqrt(s)


cdef double _off(double[:, ::1] a, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return sqrt(s)


cdef void _rotate_into(double[:, ::1] a, double[:, ::1] v, double[:, ::1] out,
                       double[:, ::1] tmp, Py_ssize_t n) noexcept nogil:
    # out = v.T @ a @ v
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += a[i, k] * v[k, j]
            tmp[i, j] = s
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(n):
                s += v[k, i] * tmp[k, j]
            out[i, j] = s
            out[j, i] = s


cdef int _jacobi(double[:, ::1] a, double[:, ::1] v, Py_ssize_t n,
                 double tol, int max_sweeps) noexcept nogil:
    """Diagonalise ``a`` in place, accumulating rotations into ``v``.

    Returns the number of sweeps used, or -1 on non-convergence.
    """
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double apq, diff, theta, t, c, s, x, y
    cdef double threshold = tol * _fro(a, n)
    for sweep in range(max_sweeps + 1):
        if _off(a, n) <= threshold:
            return sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if fabs(diff) > 1e100 * fabs(apq):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = copysign(1.0, theta) / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    x = a[k, p]
                    y = a[k, q]
                    a[k, p] = c * x - s * y
                    a[k, q] = s * x + c * y
                for k in range(n):
                    x = a[p, k]
                    y = a[q, k]
                    a[p, k] = c * x - s * y
                    a[q, k] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    x = v[k, p]
                    y = v[k, q]
                    v[k, p] = c * x - s * y
                    v[k, q] = s * x + c * y
    return -1


cdef int _eig_warm(double[:, ::1] A, double[:, ::1] v, double[:, ::1] work,
                   double[:, ::1] tmp, double* w, Py_ssize_t n,
                   double tol, int max_sweeps) noexcept nogil:
    # eigenpairs of A with v holding the warm-start basis on entry
    cdef Py_ssize_t i
    cdef int status
    _rotate_into(A, v, work, tmp, n)
    status = _jacobi(work, v, n, tol, max_sweeps)
    for i in range(n):
        w[i] = work[i, i]
    return status


cdef void _assemble_floor(double[:, ::1] v, double* w, double floor,
                          double[:, ::1] out, Py_ssize_t n) noexcept nogil:
    # out = v diag(max(w, floor)) v.T
    cdef Py_ssize_t i, j, k
    cdef double s, lam
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(n):
                lam = w[k] if w[k] > floor else floor
                s += v[i, k] * lam * v[j, k]
            out[i, j] = s
            out[j, i] = s


def jacobi_eigh(A, double tol=1e-12, int max_sweeps=50, V0=None):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with eigenvalues ascending and ``A = V diag(w) V.T``.
    """
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64).copy()
    cdef Py_ssize_t n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError("jacobi_eigh expects a square matrix")
    if n == 0:
        return np.empty(0), np.empty((0, 0))
    sym = 0.5 * (np.asarray(a) + np.asarray(a).T)
    a = np.ascontiguousarray(sym)
    if V0 is None:
        V = np.eye(n)
    else:
        V = np.ascontiguousarray(V0, dtype=np.float64).copy()
    cdef double[:, ::1] v = V
    cdef double[:, ::1] work = np.empty((n, n))
    cdef double[:, ::1] tmp = np.empty((n, n))
    wv = np.empty(n)
    cdef double[::1] w = wv
    cdef int status
    with nogil:
        status = _eig_warm(a, v, work, tmp, &w[0], n, tol, max_sweeps)
    if status < 0:
        raise NumericalError("Jacobi eigensolver did not converge")
    order = np.argsort(wv, kind="stable")
    return wv[order], V[:, order]


def project_psd_floor(S, double floor=0.0):
    """Frobenius projection of symmetric ``S`` onto ``{X : lambda_min(X) >= floor}``."""
    Sa = np.ascontiguousarray(S, dtype=np.float64)
    cdef Py_ssize_t n = Sa.shape[0]
    cdef double[:, ::1] a = np.ascontiguousarray(0.5 * (Sa + Sa.T))
    cdef double[:, ::1] v = np.eye(n)
    cdef double[:, ::1] work = np.empty((n, n))
    cdef double[:, ::1] tmp = np.empty((n, n))
    out = np.empty((n, n))
    cdef double[:, ::1] o = out
    wv = np.empty(n)
    cdef double[::1] w = wv
    cdef int status
    if n == 0:
        return out
    with nogil:
        status = _eig_warm(a, v, work, tmp, &w[0], n, 1e-12, 50)
    if status < 0:
        raise NumericalError("Jacobi eigensolver did not converge")
    if wv.min() >= floor:
        return np.array(Sa, copy=True)
    with nogil:
        _assemble_floor(v, &w[0], floor, o, n)
    return out


def project_dsy(U, double floor=0.0, double tol=1e-11, int max_iter=10000):
    """Dykstra projection onto ``{lambda_min(X) >= floor} ∩ {X[0, 0] = 1}``.

    Returns ``(X, iterations)``.
    """
    Ua = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t n = Ua.shape[0]
    if n == 0 or Ua.shape[1] != n:
        raise ValueError("project_dsy expects a non-empty square matrix")
    X = np.ascontiguousarray(0.5 * (Ua + Ua.T))
    cdef double[:, ::1] x = X
    cdef double[:, ::1] p = np.zeros((n, n))
    cdef double[:, ::1] z = np.empty((n, n))
    cdef double[:, ::1] y = np.empty((n, n))
    cdef double[:, ::1] v = np.eye(n)
    cdef double[:, ::1] work = np.empty((n, n))
    cdef double[:, ::1] tmp = np.empty((n, n))
    cdef double* w = <double*> malloc(n * sizeof(double))
    cdef Py_ssize_t i, j
    cdef int it, status = 0, done = 0
    cdef double change = 0.0, d, wmin
    if w == NULL:
        raise MemoryError()
    try:
        with nogil:
            for it in range(1, max_iter + 1):
                if it % 256 == 0:
                    # rotations accumulate rounding; restart from the identity basis
                    for i in range(n):
                        for j in range(n):
                            v[i, j] = 1.0 if i == j else 0.0
                for i in range(n):
                    for j in range(n):
                        z[i, j] = x[i, j] + p[i, j]
                status = _eig_warm(z, v, work, tmp, w, n, 1e-12, 50)
                if status < 0:
                    break
                wmin = w[0]
                for i in range(1, n):
                    if w[i] < wmin:
                        wmin = w[i]
                if wmin >= floor:
                    for i in range(n):
                        for j in range(n):
                            y[i, j] = z[i, j]
                else:
                    _assemble_floor(v, w, floor, y, n)
                # the correction can keep moving while x repeats, so it enters the test
                change = 0.0
                for i in range(n):
                    for j in range(n):
                        d = z[i, j] - y[i, j] - p[i, j]
                        change += d * d
                        p[i, j] = z[i, j] - y[i, j]
                y[0, 0] = 1.0
                for i in range(n):
                    for j in range(n):
                        d = y[i, j] - x[i, j]
                        change += d * d
                        x[i, j] = y[i, j]
                change = sqrt(change)
                if change <= tol:
                    done = 1
                    break
    finally:
        free(w)
    if status < 0:
        raise NumericalError("Jacobi eigensolver did not converge inside projection")
    if not done:
        raise ProjectionError(
            f"Dykstra projection did not converge in {max_iter} iterations "
            f"(last change {change:.3e})",
            residual=float(change),
            iterations=max_iter,
        )
    return X, it
