"""Pure-Python implementations of the hot linear-algebra kernels.

Used when the compiled ``_core`` extension is unavailable or when the
environment variable ``COCO_PURE_PYTHON`` is set. The public surface mirrors
``_core`` exactly:

* ``jacobi_eigh(A, tol, max_sweeps, V0)``
* ``project_psd_floor(S, floor)``
* ``project_dsy(U, floor, tol, max_iter)``

``jacobi_eigh`` is a literal cyclic Jacobi sweep written with numpy row and
column updates. It is slow and exists as the reference the compiled version is
checked against; the projections use LAPACK (``numpy.linalg.eigh``) because
a Python-level rotation loop inside every projected-gradient step would be
prohibitively slow.
"""

import numpy as np

from .errors import NumericalError, ProjectionError

BACKEND = "python"


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return np.sqrt(np.sum(off * off))


def jacobi_eigh(A, tol=1e-12, max_sweeps=50, V0=None):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with eigenvalues ascending and ``A = V diag(w) V.T``.
    ``V0`` (orthogonal) warm-starts the sweep from a nearby eigenbasis.
    Converged when the off-diagonal norm is at most ``tol * ||A||_F``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("jacobi_eigh expects a square matrix")
    if V0 is None:
        V = np.eye(n)
        a = 0.5 * (A + A.T)
    else:
        V = np.array(V0, dtype=float)
        a = V.T @ (0.5 * (A + A.T)) @ V
    scale = np.linalg.norm(a)
    threshold = tol * scale
    for _ in range(max_sweeps):
        if _off_norm(a) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) > 1e100 * abs(apq):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if _off_norm(a) > threshold:
            raise NumericalError("Jacobi eigensolver did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def project_psd_floor(S, floor=0.0):
    """Frobenius projection of symmetric ``S`` onto ``{X : lambda_min(X) >= floor}``."""
    S = np.asarray(S, dtype=float)
    try:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if w[0] >= floor:
        return np.array(S, dtype=float, copy=True)
    w = np.maximum(w, floor)
    X = (V * w) @ V.T
    return 0.5 * (X + X.T)


def project_dsy(U, floor=0.0, tol=1e-11, max_iter=10_000):
    """Dykstra projection onto ``{lambda_min(X) >= floor} ∩ {X[0, 0] = 1}``.

    Returns ``(X, iterations)``. The affine set needs no Dykstra correction,
    so only the PSD-floor step carries one.
    """
    x = np.array(U, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != x.shape[1]:
        raise ValueError("project_dsy expects a non-empty square matrix")
    x = 0.5 * (x + x.T)
    p = np.zeros_like(x)
    change = np.inf
    for it in range(1, max_iter + 1):
        y = project_psd_floor(x + p, floor)
        p_next = x + p - y
        y[0, 0] = 1.0
        # the correction can keep moving while x repeats, so it enters the test
        change = np.sqrt(np.sum((y - x) ** 2) + np.sum((p_next - p) ** 2))
        p = p_next
        x = y
        if change <= tol:
            return x, it
    raise ProjectionError(
        f"Dykstra projection did not converge in {max_iter} iterations "
        f"(last change {change:.3e})",
        residual=float(change),
        iterations=max_iter,
    )
