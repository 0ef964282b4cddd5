"""Conditional moments implied by a fitted parameter, and services on them.

A :class:`MomentEstimate` stores the covariance in factored form
``Sigma = Phi S Phi^T + diag(d)`` and never materialises the ``N x N``
matrix outside of :meth:`MomentEstimate.dense_covariance`. Inverses and
log-determinants use the Woodbury and Sylvester identities in the
symmetric form ``W = Phi S^{1/2}``, which stays exact when ``S`` is
singular.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

__all__ = [
    "DELTA",
    "MomentEstimate",
    "moment_kernel",
    "coco_moments",
    "precision_apply",
    "log_det",
    "cmve",
    "factor_portfolios",
    "factor_covariance",
    "systematic_ratio",
    "write_mu_csv",
]


class _Delta:
    """The auxiliary point: a covariate that carries the constant 1."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DELTA"


DELTA = _Delta()


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    """Mean and factored covariance of one cross section.

    ``Sigma = phi_sy @ S @ phi_sy.T + diag(sigma_id_diag)``.
    """

    mu: np.ndarray
    phi_sy: np.ndarray
    S: np.ndarray
    sigma_id_diag: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        d = np.asarray(self.sigma_id_diag, dtype=float)
        phi = np.asarray(self.phi_sy, dtype=float).reshape(len(mu), -1)
        S = np.asarray(self.S, dtype=float).reshape(phi.shape[1], phi.shape[1])
        if d.shape != mu.shape:
            raise ValueError("sigma_id_diag and mu must have the same length")
        for name, arr in (("mu", mu), ("phi_sy", phi), ("S", S), ("sigma_id_diag", d)):
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"moment estimate has non-finite {name}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi_sy", phi)
        object.__setattr__(self, "S", 0.5 * (S + S.T))
        object.__setattr__(self, "sigma_id_diag", d)

    @property
    def n(self):
        return self.mu.shape[0]

    @property
    def m(self):
        return self.phi_sy.shape[1]

    def trace_systematic(self):
        G = self.phi_sy.T @ self.phi_sy
        return float(np.sum(G * self.S))

    def trace(self):
        return self.trace_systematic() + float(np.sum(self.sigma_id_diag))

    def dense_covariance(self):
        """Assemble ``Sigma`` densely. Only meant for small ``N`` and for tests."""
        Sig = self.phi_sy @ self.S @ self.phi_sy.T
        Sig[np.diag_indices_from(Sig)] += self.sigma_id_diag
        return 0.5 * (Sig + Sig.T)

    def _woodbury(self):
        cached = self._cache.get("woodbury")
        if cached is not None:
            return cached
        d = self.sigma_id_diag
        if np.any(d <= 0):
            raise NumericalError("idiosyncratic variances must be strictly positive for a precision")
        if self.m:
            s, Q = np.linalg.eigh(self.S)
            keep = s > 1e-12 * s[-1] if s[-1] > 0 else np.zeros(s.shape, dtype=bool)
            W = self.phi_sy @ (Q[:, keep] * np.sqrt(s[keep]))
        else:
            W = np.zeros((self.n, 0))
        Wd = W / d[:, None]
        C = np.eye(W.shape[1]) + W.T @ Wd
        try:
            Lc = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise NumericalError("capacitance matrix is not positive definite") from None
        logdet = float(np.sum(np.log(d)) + 2.0 * np.sum(np.log(np.diag(Lc))))
        if not math.isfinite(logdet):
            raise NumericalError("log-determinant is not finite")
        cached = (W, Wd, Lc, logdet)
        self._cache["woodbury"] = cached
        return cached

    def to_dict(self):
        return {
            "mu": self.mu.tolist(),
            "phi_sy": self.phi_sy.tolist(),
            "S": self.S.tolist(),
            "sigma_id_diag": self.sigma_id_diag.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        mu = np.array(d["mu"], dtype=float)
        return cls(mu, np.array(d["phi_sy"], dtype=float).reshape(len(mu), -1),
                   np.array(d["S"], dtype=float), np.array(d["sigma_id_diag"], dtype=float))


def _feature_rows(fmap, z):
    return np.atleast_2d(fmap(np.atleast_2d(z)) if callable(fmap) else fmap)


def moment_kernel(U, phi_sy, phi_id, z, z2):
    """Moment kernel between two covariates, either of which may be ``DELTA``.

    ``q(z, z') = [1_{z=DELTA}, phi_sy(z)] U_sy [1_{z'=DELTA}, phi_sy(z')]^T
    + phi_id(z) U_id phi_id(z')^T 1_{z=z'}`` with features vanishing at ``DELTA``.
    """
    def border(v):
        out = np.zeros(U.m_sy + 1)
        if v is DELTA:
            out[0] = 1.0
            return out
        row = _feature_rows(phi_sy, v)[0]
        if row.shape != (U.m_sy,):
            raise ValueError(f"systematic features have length {row.shape[0]}, expected {U.m_sy}")
        out[1:] = row
        return out

    q = float(border(z) @ U.U_sy @ border(z2))
    if z is DELTA or z2 is DELTA:
        return q
    za = np.asarray(z, dtype=float)
    zb = np.asarray(z2, dtype=float)
    if za.shape != zb.shape:
        raise ValueError(f"dimension mismatch: {za.shape} vs {zb.shape}")
    if np.array_equal(za, zb):
        f = _feature_rows(phi_id, za)[0]
        if f.shape != (U.m_id,):
            raise ValueError(f"idiosyncratic features have length {f.shape[0]}, expected {U.m_id}")
        q += float(f @ U.U_id @ f)
    return q


def coco_moments(U, phi_sy, phi_id, xi, floor_id=None):
    """Mean and factored covariance of cross section ``xi`` under parameter ``U``.

    The idiosyncratic variance of asset ``i`` is ``phi_id(z_i) U_id phi_id(z_i)^T``
    clamped at ``floor_id`` (``U.floor_id`` by default). Assets are told apart
    by position, so two assets with identical covariates still get separate
    idiosyncratic terms.
    """
    floor_id = U.floor_id if floor_id is None else floor_id
    Phi_s = _feature_rows(phi_sy, xi.covariates)
    Phi_i = _feature_rows(phi_id, xi.covariates)
    if not (np.all(np.isfinite(Phi_s)) and np.all(np.isfinite(Phi_i))):
        raise NumericalError(f"non-finite features in cross section {getattr(xi, 'date', '')!r}")
    if Phi_s.shape != (xi.n, U.m_sy) or Phi_i.shape != (xi.n, U.m_id):
        raise ValueError("feature dimensions do not match the parameter")
    mu = Phi_s @ U.b
    d = np.einsum("ij,jk,ik->i", Phi_i, U.U_id, Phi_i)
    d = np.maximum(d, floor_id)
    return MomentEstimate(mu, Phi_s, U.S, d)


def precision_apply(est, v):
    """``Sigma^{-1} v`` via the Woodbury identity."""
    v = np.asarray(v, dtype=float)
    W, Wd, Lc, _ = est._woodbury()
    d = est.sigma_id_diag
    base = v / d[:, None] if v.ndim == 2 else v / d
    if W.shape[1] == 0:
        return base
    inner = np.linalg.solve(Lc.T, np.linalg.solve(Lc, W.T @ base))
    return base - Wd @ inner


def log_det(est):
    """``log det Sigma`` via the Sylvester determinant identity."""
    return est._woodbury()[3]


def cmve(est):
    """Mean-variance efficient weights ``Sigma^{-1} mu`` and their Sharpe ratio.

    The Sharpe ratio is per period; annualise at reporting time.
    """
    w = precision_apply(est, est.mu)
    return w, math.sqrt(max(float(est.mu @ w), 0.0))


def _factor_map(Phi, id_weights):
    """Weighted least-squares map ``P = (W Phi)^+ W`` with ``W = diag(id_weights)``."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    n = Phi.shape[0]
    wts = np.ones(n) if id_weights is None else np.asarray(id_weights, dtype=float)
    if wts.shape != (n,) or np.any(wts <= 0):
        raise ValueError("id_weights must be a positive vector with one entry per asset")
    WPhi = Phi * wts[:, None]
    if WPhi.shape[1] == 0:
        return np.zeros((0, n))
    return np.linalg.pinv(WPhi, rcond=1e-12) * wts[None, :]


def factor_portfolios(phi_sy, x_next, id_weights=None):
    """Factor returns ``f = (W Phi)^+ W x`` and residuals ``x - Phi f``."""
    Phi = np.atleast_2d(np.asarray(phi_sy, dtype=float))
    x = np.asarray(x_next, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("returns must be finite")
    P = _factor_map(Phi, id_weights)
    f = P @ x
    return f, x - Phi @ f


def factor_covariance(est, id_weights=None):
    """Conditional covariance ``P Sigma P^T`` of the factor portfolios."""
    P = _factor_map(est.phi_sy, id_weights)
    PPhi = P @ est.phi_sy
    F = PPhi @ est.S @ PPhi.T + (P * est.sigma_id_diag[None, :]) @ P.T
    return 0.5 * (F + F.T)


def systematic_ratio(est, f_cov=None):
    """Share of total variance spanned by the factor portfolios.

    ``tr(Phi f_cov Phi^T) / tr(Sigma)``, computed with ``m x m`` traces.
    """
    if f_cov is None:
        f_cov = factor_covariance(est)
    total = est.trace()
    if total <= 0:
        raise NumericalError("total variance is zero")
    G = est.phi_sy.T @ est.phi_sy
    return float(np.sum(np.asarray(f_cov) * G) / total)


def estimate_from_param(U, Phi_s, Phi_i, floor_id=None):
    """:func:`coco_moments` for precomputed feature rows."""
    floor_id = U.floor_id if floor_id is None else floor_id
    d = np.maximum(np.einsum("ij,jk,ik->i", Phi_i, U.U_id, Phi_i), floor_id)
    return MomentEstimate(Phi_s @ U.b, Phi_s, U.S, d)


def benchmark_moments(sigma2, xi):
    """Zero-mean, purely idiosyncratic benchmark with variance ``sigma2`` for every asset."""
    n = xi.n if hasattr(xi, "n") else int(xi)
    if not sigma2 > 0:
        raise ValueError("benchmark variance must be positive")
    return MomentEstimate(np.zeros(n), np.zeros((n, 0)), np.zeros((0, 0)), np.full(n, float(sigma2)))


def write_mu_csv(est, path, asset_ids=None, header_lines=()):
    """Conditional means of one cross section as CSV ``asset_id, mu``."""
    ids = [str(i) for i in range(est.n)] if asset_ids is None else [str(a) for a in asset_ids]
    if len(ids) != est.n:
        raise ValueError(f"{len(ids)} asset ids for {est.n} means")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "mu"])
        for a, m in zip(ids, est.mu):
            w.writerow([a, repr(float(m))])
