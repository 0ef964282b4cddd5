"""Synthetic factor-model panels and the parameter-consistency experiment.

Returns follow ``x = Phi g + sqrt(u_id) w`` where ``Phi`` holds population
features of the covariates, ``g ~ N(b, V - b b^T)`` and ``w ~ N(0, I)``.
Every month draws from its own stream keyed by ``(seed, t)`` so a month's
data does not depend on how many months are simulated.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .features import FeatureMap, KernelSpec, build_feature_map, constant_id_feature
from .moments import coco_moments
from .objective import objective_from_arrays
from .panel import Panel, PeriodRecord
from .params import ParamU
from .solver import SolverOptions, solve
from .vech import vech

__all__ = [
    "PopulationModel",
    "gen_population",
    "simulate_panel",
    "simulate_month",
    "draw_returns",
    "population_moments",
    "asymptotics_experiment",
    "rate_slope",
    "month_labels",
]


@dataclass(frozen=True, eq=False)
class PopulationModel:
    b_pop: np.ndarray
    V_pop: np.ndarray
    u_id_pop: float
    feature_map: FeatureMap
    d: int
    sampler: str = "normal"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b_pop, dtype=float))
        V = np.atleast_2d(np.asarray(self.V_pop, dtype=float))
        object.__setattr__(self, "b_pop", b)
        object.__setattr__(self, "V_pop", 0.5 * (V + V.T))
        if V.shape != (len(b), len(b)) or self.feature_map.rank != len(b):
            raise ValueError("population dims disagree with the feature map rank")
        if self.u_id_pop < 0:
            raise ValueError("idiosyncratic variance must be non-negative")

    @property
    def m(self):
        return len(self.b_pop)

    @property
    def U_sy(self):
        U = np.empty((self.m + 1, self.m + 1))
        U[0, 0] = 1.0
        U[0, 1:] = U[1:, 0] = self.b_pop
        U[1:, 1:] = self.V_pop
        return U

    @property
    def S(self):
        return self.V_pop - np.outer(self.b_pop, self.b_pop)

    @property
    def param(self):
        return ParamU(self.U_sy, np.array([[self.u_id_pop]]))

    def features(self, Z):
        return self.feature_map(Z)

    def to_dict(self):
        return {
            "b_pop": self.b_pop.tolist(),
            "V_pop": self.V_pop.tolist(),
            "u_id_pop": float(self.u_id_pop),
            "d": int(self.d),
            "sampler": self.sampler,
            "feature_map": self.feature_map.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["b_pop"], dtype=float),
            np.array(d["V_pop"], dtype=float),
            float(d["u_id_pop"]),
            FeatureMap.from_dict(d["feature_map"]),
            int(d["d"]),
            d.get("sampler", "normal"),
            d.get("meta", {}),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def gen_population(m=40, d=None, seed=0, u_id=None, kernel=None, eig_floor=1e-3, ref_size=None):
    """Random feasible population parameters with a cosine-kernel feature map.

    The feature map is built by pivoted Cholesky on a seeded reference sample
    of standard normal covariates. ``b`` and the factor covariance
    ``S = C C^T / m + delta I`` are drawn so that the bordered matrix has
    smallest eigenvalue at least ``10 * eig_floor``, i.e. the population
    sits strictly inside the floored feasible set.
    """
    if m < 1:
        raise ValueError("population rank must be at least 1")
    d = m if d is None else int(d)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xC0C0,)))
    kernel = kernel or KernelSpec("cosine")
    ref_size = ref_size or max(20 * m, 200)
    Z_ref = rng.standard_normal((ref_size, d))
    fmap = build_feature_map(kernel, Z_ref, m)
    if fmap.rank < m:
        raise NumericalError(f"reference sample supports rank {fmap.rank} < {m}; increase d")
    b = 0.1 * rng.standard_normal(m) / math.sqrt(m)
    C = rng.standard_normal((m, m))
    S = 0.04 * (C @ C.T) / m + 0.01 * np.eye(m)
    u = 0.04 if u_id is None else float(u_id)
    if u <= 0:
        raise ValueError("u_id must be positive")
    pop = PopulationModel(b, S + np.outer(b, b), u, fmap, d, "normal", {"seed": int(seed)})
    shift = 10.0 * eig_floor
    while np.linalg.eigvalsh(pop.U_sy)[0] < 10.0 * eig_floor:
        # lift the factor covariance until the population has slack above the floor
        S = S + shift * np.eye(m)
        shift *= 2.0
        pop = PopulationModel(b, S + np.outer(b, b), u, fmap, d, "normal", {"seed": int(seed)})
    return pop


def month_labels(T, start="2000-01"):
    """``T`` consecutive ``YYYY-MM`` labels beginning at ``start``."""
    year, month = (int(p) for p in start.split("-"))
    out = []
    k = year * 12 + month - 1
    for t in range(T):
        y, mo = divmod(k + t, 12)
        out.append(f"{y:04d}-{mo + 1:02d}")
    return out


def _sqrt_psd(S):
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return Q * np.sqrt(np.maximum(w, 0.0))


def _innovations(rng, shape, innovations, df):
    if innovations == "normal":
        return rng.standard_normal(shape)
    if innovations == "student_t":
        if df <= 2:
            raise ValueError("Student-t innovations need df > 2 for a finite variance")
        return rng.standard_t(df, shape) * math.sqrt((df - 2.0) / df)
    raise ValueError(f"unknown innovation law {innovations!r}")


def _month_rng(seed, t):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(t),)))


def draw_returns(pop, Phi, rng, innovations="normal", df=5.0):
    """One draw of ``x = Phi g + sqrt(u_id) w`` for fixed feature rows ``Phi``."""
    g = pop.b_pop + _sqrt_psd(pop.S) @ _innovations(rng, pop.m, innovations, df)
    w = _innovations(rng, Phi.shape[0], innovations, df)
    return Phi @ g + math.sqrt(pop.u_id_pop) * w


def simulate_month(pop, n, seed, t, innovations="normal", df=5.0):
    """Covariates, features and next-month returns of simulated month ``t``."""
    rng = _month_rng(seed, t)
    Z = rng.standard_normal((n, pop.d))
    Phi = pop.features(Z)
    return Z, Phi, draw_returns(pop, Phi, rng, innovations, df)


def simulate_panel(pop, T, n_schedule=100, seed=0, start="2000-01", innovations="normal", df=5.0):
    """Simulated panel of ``T`` months.

    ``n_schedule`` is a constant cross-section size or one size per month.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    sizes = np.broadcast_to(np.asarray(n_schedule, dtype=int), (T,))
    if np.any(sizes < 1):
        raise ValueError("cross-section sizes must be at least 1")
    names = tuple(f"z{j + 1}" for j in range(pop.d))
    periods = []
    for t, (date, n) in enumerate(zip(month_labels(T, start), sizes)):
        Z, _, x = simulate_month(pop, int(n), seed, t, innovations, df)
        periods.append(PeriodRecord(date, tuple(f"A{i:05d}" for i in range(n)), x, Z))
    meta = {"source": "simulate", "seed": int(seed), "innovations": innovations, "log": []}
    return Panel(tuple(periods), names, meta)


def population_moments(pop, xi):
    """Conditional moments of ``xi`` under the population parameters."""
    return coco_moments(pop.param, pop.feature_map, constant_id_feature(), xi, floor_id=0.0)


def _deviation(U_sy, u_id, pop):
    diff = vech(U_sy, check=False) - vech(pop.U_sy)
    return float(diff @ diff + (u_id - pop.u_id_pop) ** 2)


def _align(fmap_new, pop, Z_ref):
    """Matrix ``R`` with ``phi_pop(z) ~= phi_new(z) R`` on a reference sample."""
    A = fmap_new(Z_ref)
    B = pop.features(Z_ref)
    R, *_ = np.linalg.lstsq(A, B, rcond=None)
    return R


def _run_cell(pop, T, n, seed, rep, opts, features, innovations):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(T), int(rep))))
    Z = rng.standard_normal((T * n, pop.d))
    g = pop.b_pop + rng.standard_normal((T, pop.m)) @ _sqrt_psd(pop.S).T
    w = _innovations(rng, (T, n), innovations, 5.0)
    Phi_pop = pop.features(Z).reshape(T, n, pop.m)
    X = np.einsum("tnk,tk->tn", Phi_pop, g) + math.sqrt(pop.u_id_pop) * w
    if features == "population":
        Phi, gram = Phi_pop, pop.feature_map.gram
    else:
        fmap = build_feature_map(pop.feature_map.kernel, Z, pop.m)
        if fmap.rank != pop.m:
            raise NumericalError(f"re-selected feature rank {fmap.rank} differs from {pop.m}")
        Phi, gram = fmap(Z).reshape(T, n, pop.m), fmap.gram
    obj = objective_from_arrays(Phi, np.ones((T, n, 1)), X, 1.0 / n, gram, np.eye(1))
    rep_ = solve(obj, opts)
    U_sy = rep_.u_star.U_sy
    if features != "population":
        # express the fitted kernel in the population feature basis
        R = _align(fmap, pop, Z[: min(len(Z), 2000)])
        Rinv = np.linalg.inv(R)
        Tm = np.eye(pop.m + 1)
        Tm[1:, 1:] = Rinv
        U_sy = Tm.T @ U_sy @ Tm
    return _deviation(U_sy, float(rep_.u_star.U_id[0, 0]), pop), rep_.converged


def asymptotics_experiment(pop, T_list=(100, 400, 1600, 6400), reps=100, seed=0, solver_opts=None,
                           n=20, threads=1, features="population", innovations="normal"):
    """Log squared parameter deviation for each ``(T, rep)`` cell.

    Returns a list of dicts ``{T, rep, log_dev, valid, converged}`` in
    ``(T, rep)`` order. A cell whose fit raises is kept with ``valid=False``.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    if features not in ("population", "reselect"):
        raise ValueError(f"unknown feature mode {features!r}")
    opts = solver_opts or SolverOptions()
    cells = [(int(T), r) for T in T_list for r in range(reps)]

    def run(cell):
        T, r = cell
        try:
            dev, conv = _run_cell(pop, T, n, seed, r, opts, features, innovations)
            return {"T": T, "rep": r, "log_dev": math.log(dev), "valid": True, "converged": conv}
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            return {"T": T, "rep": r, "log_dev": math.nan, "valid": False, "converged": False,
                    "error": str(exc)}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(run, cells))
    return [run(c) for c in cells]


def rate_slope(table):
    """OLS slope of the median log deviation on log T, with the medians used."""
    by_T = {}
    for row in table:
        if row["valid"]:
            by_T.setdefault(row["T"], []).append(row["log_dev"])
    Ts = sorted(by_T)
    if len(Ts) < 2:
        raise ValueError("need valid cells for at least two sample sizes")
    med = np.array([np.median(by_T[T]) for T in Ts])
    logT = np.log(np.array(Ts, dtype=float))
    slope = np.polyfit(logT, med, 1)[0]
    return float(slope), dict(zip(Ts, med.tolist()))
