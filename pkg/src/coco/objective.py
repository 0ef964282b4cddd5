"""Quadratic least-squares objective in the half-vectorised parameter.

For one cross section with returns ``x`` (length ``N``), systematic features
``Phi_s`` (``N x m_s``) and idiosyncratic features ``Phi_i`` (``N x m_i``)
the regularised loss is

    w * || Y - Psi_s U_sy Psi_s^T - Diag(Psi_i U_id Psi_i^T) ||_F^2
        + lam_sy tr(G_sy U_sy) + lam_id tr(G_id U_id)

with the bordered return matrix ``Y = [[1, x^T], [x, x x^T]]``,
``Psi_s = [[1, 0], [0, Phi_s]]`` and ``Psi_i = [[0], [Phi_i]]``. Written in
``u = [vech(U_sy); vech(U_id)]`` it is ``0.5 u^T A u + b^T u + c``.

``A`` is never built from the ``(N + 1)^2``-row design matrix. The
systematic block is ``D^T (G kron G) D`` with ``G = Psi_s^T Psi_s`` and the
blocks touching ``U_id`` only involve the ``N`` diagonal rows.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .panel import DataPoint
from .params import ParamU
from .vech import (
    diag_selector,
    dup_sandwich,
    duplication,
    unvech,
    vec,
    vech,
    vech_indices,
    vech_multiplicity,
)

__all__ = [
    "SectionCoefficients",
    "AggregateObjective",
    "vech_of",
    "vec_of",
    "unvech",
    "duplication",
    "diag_selector",
    "section_coefficients",
    "loss_direct",
    "loss_vectorized",
    "aggregate",
    "build_objective",
    "strong_convexity_bound",
]


def vech_of(A):
    return vech(A)


def vec_of(A):
    return vec(A)


def param_dims(m_sy, m_id):
    n_sy = (m_sy + 1) * (m_sy + 2) // 2
    n_id = m_id * (m_id + 1) // 2
    return n_sy, n_id


@dataclass(frozen=True, eq=False)
class SectionCoefficients:
    """Quadratic coefficients of one cross section.

    The feature rows and weight are kept so the strong-convexity bound can be
    recomputed; they are not part of the quadratic itself.
    """

    A: np.ndarray
    b: np.ndarray
    c: float
    n: int
    dims: tuple
    lambdas: tuple = (0.0, 0.0)
    phi_sy: np.ndarray = field(default=None, repr=False)
    phi_id: np.ndarray = field(default=None, repr=False)
    weight: float = None

    @property
    def M(self):
        return self.b.shape[0]


@dataclass(frozen=True, eq=False)
class AggregateObjective:
    """Sample average ``0.5 u^T A_T u + b_T^T u + c_T`` over ``T`` sections."""

    A_T: np.ndarray
    b_T: np.ndarray
    c_T: float
    T: int
    dims: tuple
    lambdas: tuple = (0.0, 0.0)
    alpha_lower: float = 0.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("an aggregate objective needs at least one section")
        M = sum(param_dims(*self.dims))
        if self.A_T.shape != (M, M) or self.b_T.shape != (M,):
            raise ValueError(f"coefficient shapes {self.A_T.shape}, {self.b_T.shape} do not match dims {self.dims}")

    @property
    def M(self):
        return self.b_T.shape[0]

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ (self.A_T @ u) + self.b_T @ u + self.c_T)

    def grad(self, u):
        return self.A_T @ np.asarray(u, dtype=float) + self.b_T

    def extend(self, other):
        """Pool with another aggregate over the same dims, weighting by ``T``."""
        if other.dims != self.dims or other.lambdas != self.lambdas:
            raise ValueError("cannot pool objectives with different dims or lambdas")
        T = self.T + other.T
        a, b = self.T / T, other.T / T
        alpha = min(self.alpha_lower, other.alpha_lower)
        return AggregateObjective(
            a * self.A_T + b * other.A_T,
            a * self.b_T + b * other.b_T,
            a * self.c_T + b * other.c_T,
            T,
            self.dims,
            self.lambdas,
            alpha,
        )

    def to_dict(self):
        return {
            "A_T": self.A_T.tolist(),
            "b_T": self.b_T.tolist(),
            "c_T": float(self.c_T),
            "T": int(self.T),
            "dims": list(self.dims),
            "lambdas": [float(v) for v in self.lambdas],
            "alpha_lower": float(self.alpha_lower),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["A_T"], dtype=float),
            np.array(d["b_T"], dtype=float),
            float(d["c_T"]),
            int(d["T"]),
            tuple(d["dims"]),
            tuple(d.get("lambdas", (0.0, 0.0))),
            float(d.get("alpha_lower", 0.0)),
        )


def _features(fmap, Z):
    out = fmap(Z) if callable(fmap) else np.asarray(fmap, dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericalError("feature map produced non-finite values")
    return out


def _id_products(Phi_i):
    """Rows ``D^T vec(phi phi^T)`` of the idiosyncratic features, shape ``(..., N, n_id)``."""
    rows, cols = vech_indices(Phi_i.shape[-1])
    return Phi_i[..., rows] * Phi_i[..., cols] * vech_multiplicity(Phi_i.shape[-1])


def _bordered_gram(Phi_s):
    m = Phi_s.shape[-1]
    G = np.zeros(Phi_s.shape[:-2] + (m + 1, m + 1))
    G[..., 0, 0] = 1.0
    G[..., 1:, 1:] = np.einsum("...ni,...nj->...ij", Phi_s, Phi_s)
    return G


class _Accumulator:
    """Weighted sums of the data-dependent pieces of ``A``, ``b`` and ``c``."""

    def __init__(self, m_sy, m_id):
        self.m_sy, self.m_id = m_sy, m_id
        n = m_sy + 1
        n_id = m_id * (m_id + 1) // 2
        self.gg = np.zeros((n * n, n * n))
        self.si = np.zeros((m_sy, m_sy, n_id))
        self.ii = np.zeros((n_id, n_id))
        self.yy = np.zeros((n, n))
        self.bi = np.zeros(n_id)
        self.c = 0.0
        self.count = 0

    def add_batch(self, Phi_s, Phi_i, X, w):
        """Add ``T`` sections that share the cross-section size ``N``.

        Shapes: ``Phi_s (T, N, m_sy)``, ``Phi_i (T, N, m_id)``, ``X (T, N)``, ``w (T,)``.
        """
        n = self.m_sy + 1
        G = _bordered_gram(Phi_s)
        wG = w[:, None, None] * G
        flat = wG.reshape(len(w), -1).T @ G.reshape(len(w), -1)
        # kron(G, G)[i*n + k, j*n + l] = G[i, j] G[k, l]
        self.gg += flat.reshape(n, n, n, n).transpose(0, 2, 1, 3).reshape(n * n, n * n)
        H = _id_products(Phi_i)
        self.si += np.einsum("tnc,tni,tnj->ijc", w[:, None, None] * H, Phi_s, Phi_s)
        self.ii += np.einsum("tnc,tnd->cd", w[:, None, None] * H, H)
        ys = np.concatenate([np.ones((len(w), 1)), np.einsum("tni,tn->ti", Phi_s, X)], axis=1)
        self.yy += (w[:, None] * ys).T @ ys
        self.bi += np.einsum("tnc,tn->c", w[:, None, None] * H, X * X)
        sq = np.einsum("tn,tn->t", X, X)
        self.c += float(np.sum(w * (1.0 + sq) ** 2))
        self.count += len(w)

    def coefficients(self, gram_sy, gram_id, lam_sy, lam_id, scale=1.0):
        """``(A, b, c)`` from the accumulated pieces, all multiplied by ``scale``."""
        n = self.m_sy + 1
        rows, cols = vech_indices(n)
        mult_s = vech_multiplicity(n)
        A_ss = dup_sandwich(self.gg, n)
        si_full = np.zeros((n, n, self.si.shape[2]))
        si_full[1:, 1:, :] = self.si
        A_si = mult_s[:, None] * si_full[rows, cols, :]
        A = 2.0 * scale * np.block([[A_ss, A_si], [A_si.T, self.ii]])
        A = 0.5 * (A + A.T)
        b_sy = mult_s * self.yy[rows, cols]
        b = -2.0 * scale * np.concatenate([b_sy, self.bi])
        G_sy = np.zeros((n, n))
        G_sy[1:, 1:] = gram_sy
        reg = np.concatenate([
            lam_sy * mult_s * G_sy[rows, cols],
            lam_id * vech_multiplicity(self.m_id) * vech(gram_id, check=False),
        ])
        return A, b + reg, scale * self.c


def _section_arrays(xi, phi_sy, phi_id):
    if not isinstance(xi, DataPoint):
        raise TypeError("expected a DataPoint")
    x = np.asarray(xi.returns, dtype=float)
    if x.shape != (xi.n,) or not np.all(np.isfinite(x)):
        raise DataError(f"cross section {xi.date!r}: returns must be {xi.n} finite values")
    Phi_s = _features(phi_sy, xi.covariates)
    Phi_i = _features(phi_id, xi.covariates)
    if Phi_s.shape[0] != xi.n or Phi_i.shape[0] != xi.n:
        raise DataError(f"cross section {xi.date!r}: feature rows do not match N = {xi.n}")
    return x, Phi_s, Phi_i


def _gram(fmap, m):
    g = getattr(fmap, "gram", None)
    return np.eye(m) if g is None else np.asarray(g, dtype=float)


def section_coefficients(xi, phi_sy, phi_id, lam_sy=0.0, lam_id=0.0):
    """Coefficients ``(A, b, c)`` of the regularised loss of one cross section."""
    x, Phi_s, Phi_i = _section_arrays(xi, phi_sy, phi_id)
    m_sy, m_id = Phi_s.shape[1], Phi_i.shape[1]
    acc = _Accumulator(m_sy, m_id)
    acc.add_batch(Phi_s[None], Phi_i[None], x[None], np.array([xi.weight]))
    A, b, c = acc.coefficients(_gram(phi_sy, m_sy), _gram(phi_id, m_id), lam_sy, lam_id)
    return SectionCoefficients(A, b, c, xi.n, (m_sy, m_id), (lam_sy, lam_id), Phi_s, Phi_i, xi.weight)


def _pairwise_sum(items):
    if len(items) == 1:
        return items[0]
    mid = len(items) // 2
    return _pairwise_sum(items[:mid]) + _pairwise_sum(items[mid:])


def aggregate(coeffs):
    """Arithmetic means of a stream of section coefficients.

    Sums use a fixed pairwise tree in stream order, so the result is
    reproducible bit for bit for a given order.
    """
    coeffs = list(coeffs)
    if not coeffs:
        raise ValueError("cannot aggregate an empty stream of sections")
    dims = coeffs[0].dims
    if any(c.dims != dims for c in coeffs):
        raise ValueError("sections have different parameter dimensions")
    T = len(coeffs)
    A = _pairwise_sum([c.A for c in coeffs]) / T
    b = _pairwise_sum([c.b for c in coeffs]) / T
    cc = float(_pairwise_sum([np.float64(c.c) for c in coeffs]) / T)
    return AggregateObjective(0.5 * (A + A.T), b, cc, T, dims, coeffs[0].lambdas)


def build_objective(points, phi_sy, phi_id, lam_sy=0.0, lam_id=0.0):
    """Aggregate objective over a sequence of data points.

    Equivalent to ``aggregate(section_coefficients(p, ...) for p in points)``
    but batches sections of equal size and forms ``A`` once.
    """
    points = list(points)
    if not points:
        raise ValueError("cannot build an objective from zero data points")
    arrays = [_section_arrays(p, phi_sy, phi_id) for p in points]
    m_sy, m_id = arrays[0][1].shape[1], arrays[0][2].shape[1]
    acc = _Accumulator(m_sy, m_id)
    by_size = {}
    for i, p in enumerate(points):
        by_size.setdefault(p.n, []).append(i)
    for n in sorted(by_size):
        idx = by_size[n]
        acc.add_batch(
            np.stack([arrays[i][1] for i in idx]),
            np.stack([arrays[i][2] for i in idx]),
            np.stack([arrays[i][0] for i in idx]),
            np.array([points[i].weight for i in idx]),
        )
    T = len(points)
    A, b, c = acc.coefficients(_gram(phi_sy, m_sy), _gram(phi_id, m_id), lam_sy, lam_id, 1.0 / T)
    return AggregateObjective(A, b, c, T, (m_sy, m_id), (lam_sy, lam_id))


def objective_from_arrays(Phi_s, Phi_i, X, w, gram_sy=None, gram_id=None, lam_sy=0.0, lam_id=0.0):
    """Aggregate objective for ``T`` equal-size sections given as stacked arrays."""
    Phi_s = np.asarray(Phi_s, dtype=float)
    Phi_i = np.asarray(Phi_i, dtype=float)
    X = np.asarray(X, dtype=float)
    w = np.broadcast_to(np.asarray(w, dtype=float), (X.shape[0],)).copy()
    m_sy, m_id = Phi_s.shape[2], Phi_i.shape[2]
    acc = _Accumulator(m_sy, m_id)
    acc.add_batch(Phi_s, Phi_i, X, w)
    gram_sy = np.eye(m_sy) if gram_sy is None else gram_sy
    gram_id = np.eye(m_id) if gram_id is None else gram_id
    T = X.shape[0]
    A, b, c = acc.coefficients(gram_sy, gram_id, lam_sy, lam_id, 1.0 / T)
    return AggregateObjective(A, b, c, T, (m_sy, m_id), (lam_sy, lam_id))


def loss_direct(U, xi, phi_sy, phi_id, lam_sy=0.0, lam_id=0.0):
    """Regularised loss evaluated from the dense bordered matrices.

    Independent of the vectorised machinery; used as a reference.
    """
    x, Phi_s, Phi_i = _section_arrays(xi, phi_sy, phi_id)
    U_sy, U_id = (U.U_sy, U.U_id) if isinstance(U, ParamU) else U
    U_sy = np.atleast_2d(np.asarray(U_sy, dtype=float))
    U_id = np.atleast_2d(np.asarray(U_id, dtype=float))
    m_sy, m_id = Phi_s.shape[1], Phi_i.shape[1]
    if U_sy.shape != (m_sy + 1, m_sy + 1) or U_id.shape != (m_id, m_id):
        raise ValueError(
            f"parameter shapes {U_sy.shape}, {U_id.shape} do not match features ({m_sy}, {m_id})"
        )
    N = xi.n
    Psi_s = np.zeros((N + 1, m_sy + 1))
    Psi_s[0, 0] = 1.0
    Psi_s[1:, 1:] = Phi_s
    Psi_i = np.zeros((N + 1, m_id))
    Psi_i[1:] = Phi_i
    xb = np.concatenate([[1.0], x])
    Y = np.outer(xb, xb)
    R = Y - Psi_s @ U_sy @ Psi_s.T - np.diag(np.diag(Psi_i @ U_id @ Psi_i.T))
    G_sy = np.zeros((m_sy + 1, m_sy + 1))
    G_sy[1:, 1:] = _gram(phi_sy, m_sy)
    G_id = _gram(phi_id, m_id)
    return float(
        xi.weight * np.sum(R * R)
        + lam_sy * np.trace(G_sy @ U_sy)
        + lam_id * np.trace(G_id @ U_id)
    )


def loss_vectorized(coeffs, u):
    u = np.asarray(u, dtype=float)
    if u.shape != coeffs.b.shape:
        raise ValueError(f"u has shape {u.shape}, expected {coeffs.b.shape}")
    return float(0.5 * u @ (coeffs.A @ u) + coeffs.b @ u + coeffs.c)


def design_gram(Phi_s, Phi_i):
    """``P^T P`` for the un-duplicated design of one cross section.

    ``P = [Psi_s kron Psi_s, R R^T (Psi_i kron Psi_i)]``; its Gram matrix is
    assembled from Khatri-Rao rows of the ``N`` asset rows.
    """
    N, m_s = Phi_s.shape
    m_i = Phi_i.shape[1]
    n = m_s + 1
    G = _bordered_gram(Phi_s)
    Pb = np.zeros((N, n))
    Pb[:, 1:] = Phi_s
    Ks = np.einsum("na,nb->nab", Pb, Pb).reshape(N, n * n)
    Ki = np.einsum("nc,nd->ncd", Phi_i, Phi_i).reshape(N, m_i * m_i)
    return np.block([[np.kron(G, G), Ks.T @ Ki], [Ki.T @ Ks, Ki.T @ Ki]])


def strong_convexity_bound(coeffs):
    """``2 w sigma_min(P)^2`` for one cross section; 0 if ``P`` is rank deficient."""
    if coeffs.phi_sy is None or coeffs.phi_id is None or coeffs.weight is None:
        raise ValueError("section coefficients carry no feature rows; rebuild with section_coefficients")
    PtP = design_gram(coeffs.phi_sy, coeffs.phi_id)
    lam = np.linalg.eigvalsh(0.5 * (PtP + PtP.T))
    lo, hi = lam[0], lam[-1]
    if lo <= 1e-12 * max(hi, 1.0) * PtP.shape[0]:
        return 0.0
    return float(2.0 * coeffs.weight * lo)
