"""The decision variable: a bordered systematic matrix and an idiosyncratic matrix."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .vech import unvech, vech


@dataclass(frozen=True, eq=False)
class ParamU:
    """Parameter pair ``(U_sy, U_id)``.

    ``U_sy = [[1, b^T], [b, V]]`` is ``(m_sy + 1) x (m_sy + 1)`` and PSD, so
    ``V - b b^T`` (the factor covariance) is PSD too. ``U_id`` is
    ``m_id x m_id`` PSD. The floors record the eigenvalue lower bounds the
    parameter was projected onto and are used by :meth:`validate`.
    """

    U_sy: np.ndarray
    U_id: np.ndarray
    eig_floor_sy: float = 0.0
    floor_id: float = 0.0

    def __post_init__(self):
        U_sy = np.atleast_2d(np.asarray(self.U_sy, dtype=float))
        U_id = np.atleast_2d(np.asarray(self.U_id, dtype=float))
        if U_sy.shape[0] != U_sy.shape[1] or U_sy.shape[0] < 1:
            raise ValueError(f"U_sy must be square, got {U_sy.shape}")
        if U_id.shape[0] != U_id.shape[1] or U_id.shape[0] < 1:
            raise ValueError(f"U_id must be square, got {U_id.shape}")
        object.__setattr__(self, "U_sy", U_sy)
        object.__setattr__(self, "U_id", U_id)

    @property
    def m_sy(self):
        return self.U_sy.shape[0] - 1

    @property
    def m_id(self):
        return self.U_id.shape[0]

    @property
    def b(self):
        return self.U_sy[1:, 0].copy()

    @property
    def V(self):
        return self.U_sy[1:, 1:].copy()

    @property
    def S(self):
        """Factor covariance ``V - b b^T``."""
        b = self.U_sy[1:, 0]
        S = self.U_sy[1:, 1:] - np.outer(b, b)
        return 0.5 * (S + S.T)

    @property
    def u(self):
        return np.concatenate([vech(self.U_sy), vech(self.U_id)])

    @classmethod
    def from_vector(cls, u, m_sy, m_id, eig_floor_sy=0.0, floor_id=0.0):
        n_sy = (m_sy + 1) * (m_sy + 2) // 2
        n_id = m_id * (m_id + 1) // 2
        u = np.asarray(u, dtype=float)
        if u.shape != (n_sy + n_id,):
            raise ValueError(f"vector of length {u.shape} does not match dims ({m_sy}, {m_id})")
        return cls(unvech(u[:n_sy], m_sy + 1), unvech(u[n_sy:], m_id), eig_floor_sy, floor_id)

    def validate(self, check_floors=True):
        """Raise :class:`NumericalError` if the feasibility invariants fail."""
        if not (np.all(np.isfinite(self.U_sy)) and np.all(np.isfinite(self.U_id))):
            raise NumericalError("parameter contains non-finite entries")
        if self.U_sy[0, 0] != 1.0:
            raise NumericalError(f"U_sy[0, 0] = {self.U_sy[0, 0]!r}, expected exactly 1")
        for name, M in (("U_sy", self.U_sy), ("U_id", self.U_id)):
            if np.max(np.abs(M - M.T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
                raise NumericalError(f"{name} is not symmetric")
        floor_sy = self.eig_floor_sy if check_floors else 0.0
        floor_id = self.floor_id if check_floors else 0.0
        lam_sy = np.linalg.eigvalsh(self.U_sy)[0]
        if lam_sy < floor_sy - 1e-9:
            raise NumericalError(f"lambda_min(U_sy) = {lam_sy:.3e} below floor {floor_sy:g}")
        lam_id = np.linalg.eigvalsh(self.U_id)[0]
        if lam_id < floor_id - 1e-12:
            raise NumericalError(f"lambda_min(U_id) = {lam_id:.3e} below floor {floor_id:g}")
        if self.m_sy > 0:
            lam_s = np.linalg.eigvalsh(self.S)[0]
            if lam_s < -1e-8:
                raise NumericalError(f"V - b b^T has eigenvalue {lam_s:.3e} < 0")
        return self

    def to_dict(self):
        return {
            "U_sy": self.U_sy.tolist(),
            "U_id": self.U_id.tolist(),
            "eig_floor_sy": float(self.eig_floor_sy),
            "floor_id": float(self.floor_id),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["U_sy"], dtype=float),
            np.array(d["U_id"], dtype=float),
            float(d.get("eig_floor_sy", 0.0)),
            float(d.get("floor_id", 0.0)),
        )
