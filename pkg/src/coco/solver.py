"""Projected accelerated gradient solver over the feasible parameter set.

The feasible set is ``{U_sy PSD, U_sy[0, 0] = 1} x {U_id PSD}``, with the
eigenvalue floors of :class:`SolverOptions` in place of plain PSD. Iterates
live in ``svec`` coordinates (off-diagonal entries scaled by sqrt(2)) so that
the Euclidean projection of the vector is the Frobenius projection of the
matrices, which is what eigenvalue clamping and Dykstra compute.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import DataError, NumericalError
from .objective import param_dims
from .panel import Panel
from .params import ParamU
from .vech import svec_scale, unvech, vech

__all__ = [
    "ParamU",
    "SolverOptions",
    "SolveReport",
    "project_psd_floor",
    "project_Dsy",
    "solve",
    "check_diag_feasible",
    "benchmark_sigma",
]


@dataclass(frozen=True)
class SolverOptions:
    eig_floor_sy: float = 1e-3
    floor_id: float = 1e-6
    tol: float = None
    max_iter: int = 50_000
    power_iters: int = 50
    power_tol: float = 1e-8
    proj_tol: float = 1e-11
    proj_max_iter: int = 10_000
    check_every: int = 10

    def __post_init__(self):
        if self.eig_floor_sy < 0 or self.floor_id < 0:
            raise ValueError("eigenvalue floors must be non-negative")
        if self.eig_floor_sy >= 1.0:
            raise ValueError("eig_floor_sy must be below 1 for the feasible set to be non-empty")
        if self.max_iter < 1 or self.check_every < 1:
            raise ValueError("max_iter and check_every must be positive")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class SolveReport:
    u_star: ParamU
    iterations: int
    grad_map_norm: float
    objective: float
    converged: bool
    tol: float = float("nan")
    lipschitz: float = float("nan")
    restarts: int = 0

    def to_dict(self):
        return {
            "u_star": self.u_star.to_dict(),
            "iterations": int(self.iterations),
            "grad_map_norm": float(self.grad_map_norm),
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "tol": float(self.tol),
            "lipschitz": float(self.lipschitz),
            "restarts": int(self.restarts),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ParamU.from_dict(d["u_star"]),
            int(d["iterations"]),
            float(d["grad_map_norm"]),
            float(d["objective"]),
            bool(d["converged"]),
            float(d.get("tol", "nan")),
            float(d.get("lipschitz", "nan")),
            int(d.get("restarts", 0)),
        )


def project_psd_floor(S, floor=0.0):
    """Frobenius projection onto ``{X symmetric : lambda_min(X) >= floor}``."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    return _backend.project_psd_floor(S, float(floor))


def project_Dsy(U, eig_floor=0.0, tol=1e-11, max_iter=10_000):
    """Frobenius projection onto ``{lambda_min(X) >= eig_floor, X[0, 0] = 1}`` by Dykstra."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {U.shape}")
    X, _ = _backend.project_dsy(U, float(eig_floor), float(tol), int(max_iter))
    return X


class _Problem:
    """The objective in svec coordinates together with its projection."""

    def __init__(self, obj, opts):
        m_sy, m_id = obj.dims
        self.m_sy, self.m_id = m_sy, m_id
        self.n_sy, _ = param_dims(m_sy, m_id)
        self.scale = np.concatenate([svec_scale(m_sy + 1), svec_scale(m_id)])
        inv = 1.0 / self.scale
        self.A = obj.A_T * np.outer(inv, inv)
        self.A = 0.5 * (self.A + self.A.T)
        self.b = obj.b_T * inv
        self.c = obj.c_T
        self.opts = opts

    def to_param(self, v):
        u = v / self.scale
        return ParamU(
            unvech(u[: self.n_sy], self.m_sy + 1),
            unvech(u[self.n_sy:], self.m_id),
            self.opts.eig_floor_sy,
            self.opts.floor_id,
        )

    def from_param(self, p):
        return np.concatenate([vech(p.U_sy, check=False), vech(p.U_id, check=False)]) * self.scale

    def project(self, v):
        u = v / self.scale
        U_sy = unvech(u[: self.n_sy], self.m_sy + 1)
        U_id = unvech(u[self.n_sy:], self.m_id)
        X_sy, _ = _backend.project_dsy(U_sy, self.opts.eig_floor_sy, self.opts.proj_tol, self.opts.proj_max_iter)
        X_sy[0, 0] = 1.0
        X_id = _backend.project_psd_floor(U_id, self.opts.floor_id)
        return np.concatenate([vech(X_sy, check=False), vech(X_id, check=False)]) * self.scale

    def value(self, v, Av):
        return 0.5 * float(v @ Av) + float(self.b @ v) + self.c

    def lipschitz(self):
        """Largest eigenvalue of ``A`` by power iteration from a fixed start."""
        M = self.A.shape[0]
        x = np.ones(M) / math.sqrt(M)
        lam = 0.0
        for _ in range(self.opts.power_iters):
            y = self.A @ x
            norm = float(np.linalg.norm(y))
            if norm == 0.0:
                return 0.0
            new = float(x @ y)
            x = y / norm
            if abs(new - lam) <= self.opts.power_tol * max(abs(new), 1e-300):
                lam = new
                break
            lam = new
        # Rayleigh quotients approach from below; the step safeguard below covers the gap
        return max(lam, float(np.linalg.norm(self.A @ x)))


def _initial_point(problem, init):
    if init is not None:
        if (init.m_sy, init.m_id) != (problem.m_sy, problem.m_id):
            raise ValueError("initial parameter dims do not match the objective")
        return problem.project(problem.from_param(init))
    m_sy, m_id = problem.m_sy, problem.m_id
    U_sy = np.eye(m_sy + 1) * max(problem.opts.eig_floor_sy, 0.0)
    U_sy[0, 0] = 1.0
    U_id = np.eye(m_id) * max(problem.opts.floor_id, 1.0)
    start = ParamU(U_sy, U_id)
    return problem.project(problem.from_param(start))


def solve(obj, opts=None, init=None):
    """Minimise the aggregate objective over the feasible set.

    FISTA with step ``1/L`` and a function-value restart: whenever an
    accelerated step would increase the objective the momentum is reset and
    a plain projected-gradient step is taken instead, so the accepted
    objective values never increase. Returns a :class:`SolveReport`;
    reaching ``max_iter`` gives ``converged=False`` rather than an error.
    """
    opts = opts or SolverOptions()
    problem = _Problem(obj, opts)
    if not (np.all(np.isfinite(problem.A)) and np.all(np.isfinite(problem.b)) and math.isfinite(problem.c)):
        raise NumericalError("objective coefficients are not finite")
    tol = opts.tol if opts.tol is not None else 1e-8 * (1.0 + float(np.linalg.norm(obj.b_T)))
    L = problem.lipschitz()
    if L <= 0.0:
        # constant objective: every feasible point is optimal
        x = _initial_point(problem, init)
        p = problem.to_param(x)
        return SolveReport(p, 0, 0.0, problem.value(x, problem.A @ x), True, tol, 0.0, 0)
    A = problem.A
    b = problem.b

    x = _initial_point(problem, init)
    Ax = A @ x
    fx = problem.value(x, Ax)
    y, Ay = x, Ax
    t = 1.0
    restarts = 0
    gm = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = Ay + b
        while True:
            x_new = problem.project(y - g / L)
            Ax_new = A @ x_new
            f_new = problem.value(x_new, Ax_new)
            d = x_new - y
            fy = problem.value(y, Ay)
            # quadratic upper bound must hold at the step; otherwise L was underestimated
            if f_new <= fy + float(g @ d) + 0.5 * L * float(d @ d) + 1e-12 * (1.0 + abs(fy)):
                break
            L *= 2.0
        if not math.isfinite(f_new):
            raise NumericalError(f"objective became non-finite at iteration {it}")
        if f_new > fx and y is not x:
            restarts += 1
            t = 1.0
            y, Ay = x, Ax
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        y = x_new + beta * (x_new - x)
        Ay = Ax_new + beta * (Ax_new - Ax)
        x, Ax, fx = x_new, Ax_new, f_new
        t = t_new
        if it % opts.check_every == 0:
            gm = L * float(np.linalg.norm(x - problem.project(x - (Ax + b) / L)))
            if gm <= tol:
                break
    else:
        gm = L * float(np.linalg.norm(x - problem.project(x - (Ax + b) / L)))
    p = problem.to_param(x)
    return SolveReport(p, it, gm, fx, gm <= tol, tol, L, restarts)


def check_diag_feasible(b, c):
    """Whether ``[[1, b^T], [b, diag(c)]]`` is PSD.

    True iff ``c >= 0``, ``b_i = 0`` wherever ``c_i = 0`` and
    ``sum_{c_i > 0} b_i^2 / c_i <= 1``.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if b.shape != c.shape:
        raise ValueError("b and c must have the same length")
    if np.any(c < 0):
        return False
    zero = c == 0
    if np.any(b[zero] != 0):
        return False
    pos = ~zero
    return bool(np.sum(b[pos] ** 2 / c[pos]) <= 1.0)


def benchmark_sigma(data):
    """Closed-form variance of the zero-mean scalar benchmark.

    ``sum_t w_t ||x_t||^2 / sum_t w_t N_t`` over a :class:`Panel` or a
    sequence of data points.
    """
    if isinstance(data, Panel):
        pairs = [(1.0 / p.n, p.returns) for p in data.periods]
    else:
        pairs = [(p.weight, p.returns) for p in data]
    if not pairs:
        raise DataError("benchmark variance needs at least one period")
    num = math.fsum(w * float(x @ x) for w, x in pairs)
    den = math.fsum(w * len(x) for w, x in pairs)
    return num / den
