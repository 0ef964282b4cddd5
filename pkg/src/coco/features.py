"""Scalar kernels, pivoted-Cholesky Nystrom subsampling and feature maps.

A feature map is ``phi(z) = k(z, Z_piv) @ B`` where ``Z_piv`` holds the
pivot rows selected by a greedy pivoted Cholesky factorisation of the kernel
matrix on the training covariates, and ``B`` is the mixing matrix. With the
default orthonormal mixing ``B B^T = k(Z_piv, Z_piv)^{-1}`` so the Gram
matrix of the features in the kernel's RKHS is the identity.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

KERNEL_KINDS = ("cosine", "gaussian", "laplace", "imq", "constant")
_RHO_KINDS = ("gaussian", "laplace", "imq")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and its scale parameter.

    ``rho`` is the squared length scale for ``gaussian`` (``exp(-r^2 / 2 rho)``),
    the length scale for ``laplace`` (``exp(-r / rho)``) and the offset for
    ``imq`` (``1 / sqrt(r^2 + rho)``). ``cosine`` and ``constant`` ignore it.
    """

    kind: str = "cosine"
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.kind in _RHO_KINDS and not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"{self.kind} kernel needs rho > 0, got {self.rho}")

    def to_dict(self):
        return {"kind": self.kind, "rho": float(self.rho)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], rho=float(d.get("rho", 1.0)))


def _row_norms(Z, kind):
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    if kind == "cosine" and np.any(norms == 0):
        raise DataError("cosine kernel is undefined at the zero vector")
    return norms


def _sq_dists(X, Y):
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", Y, Y)[None, :]
        - 2.0 * (X @ Y.T)
    )
    return np.maximum(d2, 0.0)


def kernel_matrix(spec, X, Y):
    """Kernel evaluations ``k(X[i], Y[j])`` as an ``len(X) x len(Y)`` array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if spec.kind == "constant":
        return np.ones((X.shape[0], Y.shape[0]))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.kind == "cosine":
        nx = _row_norms(X, "cosine")
        ny = _row_norms(Y, "cosine")
        return np.clip((X @ Y.T) / np.outer(nx, ny), -1.0, 1.0)
    d2 = _sq_dists(X, Y)
    if spec.kind == "gaussian":
        return np.exp(-d2 / (2.0 * spec.rho))
    if spec.kind == "laplace":
        return np.exp(-np.sqrt(d2) / spec.rho)
    return 1.0 / np.sqrt(d2 + spec.rho)


def eval_kernel(spec, z, z2):
    """Scalar kernel value ``k(z, z2)``."""
    z = np.asarray(z, dtype=float).ravel()
    z2 = np.asarray(z2, dtype=float).ravel()
    if spec.kind != "constant" and z.shape != z2.shape:
        raise ValueError(f"dimension mismatch: {z.shape[0]} vs {z2.shape[0]}")
    if spec.kind in _RHO_KINDS:
        # exact difference avoids cancellation in ||z||^2 + ||z2||^2 - 2<z, z2>
        diff = z - z2
        d2 = float(diff @ diff)
        if spec.kind == "gaussian":
            return float(np.exp(-d2 / (2.0 * spec.rho)))
        if spec.kind == "laplace":
            return float(np.exp(-np.sqrt(d2) / spec.rho))
        return float(1.0 / np.sqrt(d2 + spec.rho))
    return float(kernel_matrix(spec, z[None, :], z2[None, :])[0, 0])


def kernel_diagonal(spec, Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = Z.shape[0]
    if spec.kind == "cosine":
        _row_norms(Z, "cosine")
        return np.ones(n)
    if spec.kind == "imq":
        return np.full(n, 1.0 / np.sqrt(spec.rho))
    return np.ones(n)


class KernelOracle:
    """Diagonal and column access to the implicit kernel matrix ``k(Z, Z^T)``."""

    def __init__(self, spec, Z):
        self.spec = spec
        self.Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.Z.shape[0] == 0:
            raise DataError("cannot build a kernel oracle on zero rows")
        if not np.all(np.isfinite(self.Z)):
            raise DataError("covariates contain non-finite values")

    def __len__(self):
        return self.Z.shape[0]

    def diagonal(self):
        return kernel_diagonal(self.spec, self.Z)

    def column(self, j):
        return kernel_matrix(self.spec, self.Z, self.Z[j:j + 1])[:, 0]


class MatrixOracle:
    """Oracle over an explicit symmetric matrix; used for tests and small problems."""

    def __init__(self, K):
        self.K = np.asarray(K, dtype=float)

    def __len__(self):
        return self.K.shape[0]

    def diagonal(self):
        return np.diag(self.K).copy()

    def column(self, j):
        return self.K[:, j].copy()


def pivoted_cholesky(oracle, n=None, m_max=None, tol=0.0):
    """Greedy pivoted Cholesky factorisation of a PSD matrix given by an oracle.

    ``oracle`` exposes ``diagonal()`` and ``column(j)``. Pivots maximise the
    residual diagonal (ties go to the lowest index). Stops after ``m_max``
    pivots, when the residual trace drops to ``tol`` or when the largest
    residual diagonal entry is at roundoff level.

    Returns
    -------
    pivots : list of int
    factor : ndarray, shape (n, m)
        ``K[:, pivots] = factor @ factor[pivots].T`` and ``factor[pivots]`` is
        lower triangular.
    trace_error : float
        ``tr(K - factor @ factor.T)``, the Nystrom trace error of the pivots.
    """
    n = len(oracle) if n is None else int(n)
    m_max = n if m_max is None else min(int(m_max), n)
    if m_max < 0:
        raise ValueError("m_max must be non-negative")
    diag = np.array(oracle.diagonal(), dtype=float)
    if diag.shape != (n,):
        raise ValueError(f"oracle diagonal has shape {diag.shape}, expected ({n},)")
    total = float(diag.sum())
    if np.any(diag < -1e-8 * max(abs(total), 1e-300)):
        raise NumericalError("kernel diagonal is negative; kernel is not PSD")
    resid = np.maximum(diag, 0.0)
    scale = float(resid.max()) if n else 0.0
    factor = np.zeros((n, m_max))
    pivots = []
    for k in range(m_max):
        if resid.sum() <= tol:
            break
        j = int(np.argmax(resid))
        pivot_val = resid[j]
        if pivot_val <= 1e-14 * scale or pivot_val <= 0.0:
            break
        col = np.asarray(oracle.column(j), dtype=float) - factor[:, :k] @ factor[j, :k]
        col /= np.sqrt(pivot_val)
        col[pivots] = 0.0  # exact zeros above the diagonal of factor[pivots]
        factor[:, k] = col
        pivots.append(j)
        resid = resid - col * col
        if np.any(resid < -1e-8 * total):
            raise NumericalError(
                f"residual diagonal {resid.min():.3e} below -1e-8 * trace; kernel is not PSD"
            )
        resid = np.maximum(resid, 0.0)
        resid[pivots] = 0.0
    m = len(pivots)
    return pivots, factor[:, :m], float(resid.sum())


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Nystrom feature map ``phi(z) = k(z, pivots) @ mixing``."""

    kernel: KernelSpec
    pivots: np.ndarray
    mixing: np.ndarray
    trace_error: float
    gram: np.ndarray
    mixing_mode: str = "orthonormal"
    meta: dict = field(default_factory=dict)

    @property
    def rank(self):
        return self.mixing.shape[1]

    @property
    def m(self):
        return self.rank

    def __call__(self, Z):
        """Feature rows for the covariate rows ``Z`` (shape ``N x m``)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.kernel.kind == "constant":
            return np.ones((Z.shape[0], 1))
        out = kernel_matrix(self.kernel, Z, self.pivots) @ self.mixing
        if not np.all(np.isfinite(out)):
            raise NumericalError("feature map produced non-finite values")
        return out

    def to_dict(self):
        return {
            "kernel": self.kernel.to_dict(),
            "pivots": self.pivots.tolist(),
            "mixing": self.mixing.tolist(),
            "rank": self.rank,
            "trace_error": float(self.trace_error),
            "gram": self.gram.tolist(),
            "mixing_mode": self.mixing_mode,
        }

    @classmethod
    def from_dict(cls, d):
        kernel = KernelSpec.from_dict(d["kernel"])
        mixing = np.array(d["mixing"], dtype=float).reshape(-1, int(d["rank"]))
        pivots = np.array(d["pivots"], dtype=float)
        if pivots.ndim == 1:
            pivots = pivots.reshape(mixing.shape[0], -1)
        return cls(
            kernel=kernel,
            pivots=pivots,
            mixing=mixing,
            trace_error=float(d["trace_error"]),
            gram=np.array(d["gram"], dtype=float),
            mixing_mode=d.get("mixing_mode", "orthonormal"),
        )


def _orthonormal_mixing(K_pp):
    m = K_pp.shape[0]
    try:
        L = np.linalg.cholesky(K_pp)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(K_pp) / m
        try:
            L = np.linalg.cholesky(K_pp + jitter * np.eye(m))
        except np.linalg.LinAlgError:
            raise NumericalError("pivot kernel block is numerically singular") from None
    # B = L^{-T} so that B B^T = K_pp^{-1}
    return np.linalg.solve(L, np.eye(m)).T


def build_feature_map(spec, Z, m_max, tol=0.0, mixing_mode="orthonormal"):
    """Select Nystrom pivots on ``Z`` and return the resulting feature map.

    The achieved rank can fall short of ``m_max`` when the kernel matrix has
    lower numerical rank; that is recorded, not an error.
    """
    if mixing_mode not in ("orthonormal", "identity"):
        raise ValueError(f"unknown mixing mode {mixing_mode!r}")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        raise DataError("cannot build a feature map from an empty covariate sample")
    if spec.kind == "constant":
        return constant_id_feature()
    oracle = KernelOracle(spec, Z)
    pivots, _, trace_error = pivoted_cholesky(oracle, m_max=m_max, tol=tol)
    if not pivots:
        raise NumericalError("kernel matrix is numerically zero; no pivots selected")
    Z_piv = Z[pivots].copy()
    K_pp = kernel_matrix(spec, Z_piv, Z_piv)
    K_pp = 0.5 * (K_pp + K_pp.T)
    B = _orthonormal_mixing(K_pp) if mixing_mode == "orthonormal" else np.eye(len(pivots))
    gram = B.T @ K_pp @ B
    gram = 0.5 * (gram + gram.T)
    return FeatureMap(
        kernel=spec,
        pivots=Z_piv,
        mixing=B,
        trace_error=trace_error,
        gram=gram,
        mixing_mode=mixing_mode,
        meta={"pivot_index": list(pivots), "requested_rank": int(m_max), "sample_size": Z.shape[0]},
    )


def constant_id_feature():
    """The one-dimensional feature ``phi(z) = 1`` used for a scalar idiosyncratic variance."""
    return FeatureMap(
        kernel=KernelSpec("constant"),
        pivots=np.zeros((1, 0)),
        mixing=np.ones((1, 1)),
        trace_error=0.0,
        gram=np.ones((1, 1)),
        mixing_mode="identity",
    )


def median_heuristic(Z, max_rows=1000):
    """Median pairwise squared distance on an evenly spaced subsample of ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = Z.shape[0]
    if n < 2:
        return 1.0
    if n > max_rows:
        Z = Z[np.linspace(0, n - 1, max_rows).round().astype(int)]
    d2 = _sq_dists(Z, Z)
    iu = np.triu_indices(Z.shape[0], k=1)
    med = float(np.median(d2[iu]))
    return med if med > 0 else 1.0
