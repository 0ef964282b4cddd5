"""Out-of-sample metrics and their rolling and expanding aggregation.

Every metric is reduced from per-month raw sums (``MetricTerms``) so that a
rolling value over a window pools numerators and denominators across the
window instead of averaging monthly ratios.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .moments import log_det, precision_apply

ANNUALIZE = math.sqrt(12.0)

__all__ = [
    "MetricTerms",
    "MetricSeries",
    "dawid_sebastiani",
    "score_differential",
    "r2_first",
    "r2_second",
    "total_r2_factors",
    "realized_sharpe",
    "windowed",
    "first_moment_terms",
    "second_moment_terms",
    "write_series_csv",
]


def dawid_sebastiani(x, mu, est):
    """``log det Sigma + (x - mu)^T Sigma^{-1} (x - mu)``; lower is better."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if x.shape != (est.n,) or mu.shape != (est.n,):
        raise ValueError(f"expected vectors of length {est.n}, got {x.shape} and {mu.shape}")
    r = x - mu
    return log_det(est) + float(r @ precision_apply(est, r))


def score_differential(terms):
    """Mean over months of ``benchmark score - model score``; positive favours the model."""
    terms = np.asarray(list(terms), dtype=float).reshape(-1, 2)
    if terms.shape[0] == 0:
        raise ValueError("score differential needs at least one month")
    return float(np.mean(terms[:, 0] - terms[:, 1]))


def first_moment_terms(x, mu, w):
    """``(w ||x - mu||^2, w ||x||^2)`` for one month."""
    x = np.asarray(x, dtype=float)
    r = x - np.asarray(mu, dtype=float)
    return w * float(r @ r), w * float(x @ x)


def r2_first(xs, mus, weights):
    """Predictive R-squared of the conditional mean, pooled over months."""
    num = den = 0.0
    for x, mu, w in zip(xs, mus, weights):
        a, b = first_moment_terms(x, mu, w)
        num += a
        den += b
    if den == 0:
        raise ValueError("zero denominator: all returns are zero")
    return 1.0 - num / den


def second_moment_error(x, Phi, V, d):
    """``||x x^T - Phi V Phi^T - diag(d)||_F^2`` from ``m``-dimensional traces."""
    x = np.asarray(x, dtype=float)
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float)).reshape(len(x), -1)
    V = np.atleast_2d(np.asarray(V, dtype=float)).reshape(Phi.shape[1], Phi.shape[1])
    d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
    xx = float(x @ x)
    G = Phi.T @ Phi
    VG = V @ G
    px = Phi.T @ x
    lev = np.einsum("ij,jk,ik->i", Phi, V, Phi)
    val = (
        xx * xx
        + float(np.sum(VG * VG.T))
        + float(d @ d)
        - 2.0 * float(px @ V @ px)
        - 2.0 * float(d @ (x * x))
        + 2.0 * float(d @ lev)
    )
    return max(val, 0.0)


def second_moment_terms(x, Phi, V, d, sigma2_bm, w):
    """``(w * model error, w * benchmark error)`` for one month."""
    x = np.asarray(x, dtype=float)
    xx = float(x @ x)
    bench = xx * xx - 2.0 * sigma2_bm * xx + len(x) * sigma2_bm ** 2
    return w * second_moment_error(x, Phi, V, d), w * max(bench, 0.0)


def r2_second(xs, Phis, Vs, ds, sigma2_bms, weights):
    """Second-moment R-squared against the scalar benchmark, pooled over months."""
    num = den = 0.0
    for x, Phi, V, d, s2, w in zip(xs, Phis, Vs, ds, sigma2_bms, weights):
        a, b = second_moment_terms(x, Phi, V, d, s2, w)
        num += a
        den += b
    if den == 0:
        raise ValueError("zero denominator in second-moment R-squared")
    return 1.0 - num / den


def factor_fit_term(x, Phi, f):
    x = np.asarray(x, dtype=float)
    xx = float(x @ x)
    if xx == 0:
        raise ValueError("zero return vector: total R-squared undefined")
    r = x - np.atleast_2d(np.asarray(Phi, dtype=float)).reshape(len(x), -1) @ np.asarray(f, dtype=float)
    return float(r @ r) / xx


def total_r2_factors(xs, Phis, fs):
    """``1 - mean_t ||x_t - Phi_t f_t||^2 / ||x_t||^2``."""
    vals = [factor_fit_term(x, Phi, f) for x, Phi, f in zip(xs, Phis, fs)]
    if not vals:
        raise ValueError("total R-squared needs at least one month")
    return 1.0 - math.fsum(vals) / len(vals)


def _sharpe_from_sums(s, s2, n, annualize):
    mean = s / n
    var = s2 / n - mean * mean
    # the raw-moment form cancels to roughly 1e-16 * E[r^2] for constant series
    if var <= 1e-14 * (s2 / n):
        raise ValueError("zero variance: Sharpe ratio undefined")
    return (ANNUALIZE if annualize else 1.0) * mean / math.sqrt(var)


def realized_sharpe(returns, annualize=True):
    """``sqrt(12) * mean / std`` of monthly excess returns.

    The standard deviation uses the population denominator ``T``.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise ValueError("Sharpe ratio needs at least two months")
    mean = float(np.mean(r))
    sd = float(np.sqrt(np.mean((r - mean) ** 2)))
    if sd <= 1e-14 * max(float(np.max(np.abs(r))), 1e-300):
        raise ValueError("zero variance: Sharpe ratio undefined")
    return (ANNUALIZE if annualize else 1.0) * mean / sd


_REDUCERS = {
    # raw columns -> metric value on pooled window sums
    "r2": lambda s: 1.0 - s[0] / s[1],
    "mean": lambda s: s[0] / s[1],
    "one_minus_mean": lambda s: 1.0 - s[0] / s[1],
    "sharpe": lambda s: _sharpe_from_sums(s[0], s[1], s[2], True),
}


@dataclass(frozen=True, eq=False)
class MetricTerms:
    """Per-month raw sums of a metric together with the rule that reduces them."""

    dates: tuple
    columns: np.ndarray
    kind: str
    name: str = ""

    def __post_init__(self):
        cols = np.atleast_2d(np.asarray(self.columns, dtype=float))
        if cols.shape[0] != len(self.dates):
            raise ValueError("one row of terms per date is required")
        if self.kind not in _REDUCERS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "dates", tuple(self.dates))

    @classmethod
    def ratio(cls, dates, num, den, name=""):
        return cls(dates, np.column_stack([num, den]), "r2", name)

    @classmethod
    def mean(cls, dates, values, name=""):
        values = np.asarray(values, dtype=float)
        return cls(dates, np.column_stack([values, np.ones_like(values)]), "mean", name)

    @classmethod
    def one_minus_mean(cls, dates, values, name=""):
        values = np.asarray(values, dtype=float)
        return cls(dates, np.column_stack([values, np.ones_like(values)]), "one_minus_mean", name)

    @classmethod
    def sharpe(cls, dates, returns, name=""):
        r = np.asarray(returns, dtype=float)
        return cls(dates, np.column_stack([r, r * r, np.ones_like(r)]), "sharpe", name)

    def value(self):
        """The metric over all months."""
        return _REDUCERS[self.kind](self.columns.sum(axis=0))


@dataclass(frozen=True, eq=False)
class MetricSeries:
    dates: tuple
    values: np.ndarray
    kind: str
    window: str

    def __len__(self):
        return len(self.dates)

    def rows(self):
        for d, v in zip(self.dates, self.values):
            yield d, self.kind, self.window, float(v)


def _reduce(kind, sums):
    try:
        return _REDUCERS[kind](sums)
    except (ValueError, ZeroDivisionError):
        return math.nan


def windowed(terms, r=24, expanding=False):
    """Rolling (window ``r``) or expanding metric series from per-month terms.

    Each value reduces the column sums over its window. A window longer than
    the series yields an empty series.
    """
    name = terms.name or terms.kind
    T = len(terms.dates)
    cols = terms.columns
    if expanding:
        vals = [_reduce(terms.kind, cols[: t + 1].sum(axis=0)) for t in range(T)]
        return MetricSeries(terms.dates, np.array(vals), name, "expanding")
    if r < 1:
        raise ValueError("window length must be at least 1")
    if r > T:
        return MetricSeries((), np.empty(0), name, f"rolling{r}")
    vals = [_reduce(terms.kind, cols[t - r + 1: t + 1].sum(axis=0)) for t in range(r - 1, T)]
    return MetricSeries(terms.dates[r - 1:], np.array(vals), name, f"rolling{r}")


def write_series_csv(series_list, path, header_lines=()):
    """Tidy CSV with columns ``date, metric, window, value``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "metric", "window", "value"])
        for s in series_list:
            for date, metric, window, value in s.rows():
                writer.writerow([date, metric, window, repr(value)])
