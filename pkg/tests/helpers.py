"""Random instance generators shared by the test modules."""

import numpy as np

from coco.panel import DataPoint, Panel, PeriodRecord
from coco.params import ParamU


def random_U(rng, m_sy, m_id, floor=0.0):
    """Random feasible parameter: ``U_sy`` PSD with unit corner, ``U_id`` PSD."""
    G = rng.standard_normal((m_sy + 1, m_sy + 2))
    G[0] = 0.0
    G[0, 0] = 1.0
    U_sy = G @ G.T + floor * np.eye(m_sy + 1)
    # rescale so the corner is exactly one while keeping PSD
    s = 1.0 / np.sqrt(U_sy[0, 0])
    D = np.diag(np.r_[s, np.ones(m_sy)])
    U_sy = D @ U_sy @ D
    U_sy[0, 0] = 1.0
    H = rng.standard_normal((m_id, m_id + 1))
    U_id = H @ H.T + floor * np.eye(m_id)
    return ParamU(0.5 * (U_sy + U_sy.T), 0.5 * (U_id + U_id.T))


def random_point(rng, n, d=3, weight=None, scale=0.1):
    Z = rng.standard_normal((n, d))
    x = scale * rng.standard_normal(n)
    return DataPoint(n, x, Z, 1.0 / n if weight is None else weight, "2000-01")


def random_panel(rng, T, n_range=(3, 8), d=2, start_year=2000):
    periods = []
    for t in range(T):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        date = f"{start_year + t // 12:04d}-{t % 12 + 1:02d}"
        ids = tuple(f"S{i:03d}" for i in rng.permutation(50)[:n])
        periods.append(PeriodRecord(date, ids, 0.05 * rng.standard_normal(n), rng.standard_normal((n, d))))
    return Panel(tuple(periods), tuple(f"z{j + 1}" for j in range(d)), {"log": []})


def dense_sigma(est):
    return est.dense_covariance()
