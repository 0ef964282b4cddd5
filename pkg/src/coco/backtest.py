"""Rolling train / validate / test protocol.

Window ``k`` trains on months ``[k*step, k*step + train)``, validates on the
next ``val`` months and is evaluated on the ``test`` months after that.
Every fitted quantity for a test month is a function of earlier months only.
"""

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .evaluation import (
    ANNUALIZE,
    MetricTerms,
    dawid_sebastiani,
    factor_fit_term,
    first_moment_terms,
    second_moment_terms,
    windowed,
    write_series_csv,
)
from .features import KernelSpec, build_feature_map, constant_id_feature, median_heuristic
from .moments import (
    benchmark_moments,
    cmve,
    coco_moments,
    factor_covariance,
    factor_portfolios,
    systematic_ratio,
)
from .objective import build_objective
from .panel import cross_section
from .solver import SolverOptions, benchmark_sigma, solve

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "run_backtest",
    "benchmark_moments",
    "window_count",
    "config_hash",
]


@dataclass(frozen=True)
class BacktestConfig:
    train_months: int = 96
    val_months: int = 1
    test_months: int = 1
    step: int = 1
    m_sy: tuple = (5, 10, 20, 40)
    m_id: int = 1
    kernel_sy: KernelSpec = field(default_factory=KernelSpec)
    kernel_id: KernelSpec = field(default_factory=lambda: KernelSpec("constant"))
    rho_grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    lambda_sy: float = 0.0
    lambda_id: float = 0.0
    refit: str = "train"
    mixing: str = "orthonormal"
    id_weights: str = "unit"
    rolling_window: int = 24
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.train_months < 1 or self.val_months < 0 or self.test_months < 1 or self.step < 1:
            raise ValueError("need train >= 1, val >= 0, test >= 1 and step >= 1")
        ranks = (self.m_sy,) if isinstance(self.m_sy, int) else tuple(int(m) for m in self.m_sy)
        if not ranks or min(ranks) < 1:
            raise ValueError("systematic ranks must be positive")
        object.__setattr__(self, "m_sy", ranks)
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        if self.refit not in ("train", "train+val"):
            raise ValueError("refit must be 'train' or 'train+val'")
        if self.id_weights not in ("unit", "inverse_vol"):
            raise ValueError("id_weights must be 'unit' or 'inverse_vol'")
        if self.kernel_id.kind == "constant" and self.m_id != 1:
            raise ValueError("the constant idiosyncratic feature has rank 1")

    def to_dict(self):
        d = asdict(self)
        d["m_sy"] = list(self.m_sy)
        d["rho_grid"] = list(self.rho_grid)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown backtest keys: {sorted(unknown)}")
        if "kernel_sy" in d:
            d["kernel_sy"] = KernelSpec.from_dict(d["kernel_sy"])
        if "kernel_id" in d:
            d["kernel_id"] = KernelSpec.from_dict(d["kernel_id"])
        if "solver" in d:
            s = dict(d["solver"])
            bad = set(s) - {f.name for f in fields(SolverOptions)}
            if bad:
                raise ValueError(f"unknown solver keys: {sorted(bad)}")
            d["solver"] = SolverOptions(**s)
        for k in ("m_sy", "rho_grid"):
            if k in d:
                d[k] = tuple(d[k]) if not isinstance(d[k], (int, float)) else d[k]
        return cls(**d)


def window_count(T, cfg):
    span = cfg.train_months + cfg.val_months + cfg.test_months
    if T < span:
        return 0
    return (T - span) // cfg.step + 1


def config_hash(d):
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class BacktestReport:
    config: BacktestConfig
    windows: list
    terms: dict
    series: list
    skipped: list

    def summary(self):
        return {name: _safe_value(t) for name, t in sorted(self.terms.items())}

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "windows": [{k: v for k, v in w.items() if k != "params"} for w in self.windows],
            "summary": self.summary(),
            "skipped": self.skipped,
        }

    def write(self, out_dir, header=None):
        """Write ``report.json``, ``metrics.csv`` and ``params_<date>.json`` files."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = dict(header or {})
        doc = {**header, **self.to_dict()}
        (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        lines = [f"{k}: {v}" for k, v in sorted(header.items())]
        write_series_csv(self.series, out / "metrics.csv", lines)
        for w in self.windows:
            params = {**header, "window": w["window"], "models": w["params"]}
            path = out / f"params_{w['test_dates'][0]}.json"
            path.write_text(json.dumps(params, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _safe_value(terms):
    try:
        v = terms.value()
    except (ValueError, ZeroDivisionError):
        return None
    return None if not math.isfinite(v) else v


def _fit(points, cfg, m, kernel_sy, Z_train):
    fs = build_feature_map(kernel_sy, Z_train, m, mixing_mode=cfg.mixing)
    if cfg.kernel_id.kind == "constant":
        fi = constant_id_feature()
    else:
        fi = build_feature_map(cfg.kernel_id, Z_train, cfg.m_id, mixing_mode=cfg.mixing)
    obj = build_objective(points, fs, fi, cfg.lambda_sy, cfg.lambda_id)
    rep = solve(obj, cfg.solver)
    return fs, fi, rep


def _validation_score(rep, fs, fi, points):
    scores = []
    for xi in points:
        est = coco_moments(rep.u_star, fs, fi, xi)
        scores.append(dawid_sebastiani(xi.returns, est.mu, est))
    return float(np.mean(scores))


def _points(panel, start, stop):
    return [cross_section(panel, t) for t in range(start, stop)]


def _id_weights(est, mode):
    if mode == "unit":
        return None
    return 1.0 / np.sqrt(est.sigma_id_diag)


def _month_terms(xi, est, bench, V, id_mode, reference=None):
    x = xi.returns
    ds_model = dawid_sebastiani(x, est.mu, est)
    ds_bench = dawid_sebastiani(x, bench.mu, bench)
    r1 = first_moment_terms(x, est.mu, xi.weight)
    r2 = second_moment_terms(x, est.phi_sy, V, est.sigma_id_diag, bench.sigma_id_diag[0], xi.weight)
    wts = _id_weights(est, id_mode)
    f, _ = factor_portfolios(est.phi_sy, x, wts)
    fit = factor_fit_term(x, est.phi_sy, f) if float(x @ x) > 0 else math.nan
    f_cov = factor_covariance(est, wts)
    rho = systematic_ratio(est, f_cov)
    sys_share = est.trace_systematic() / est.trace()
    weights, pred = cmve(est)
    out = {
        "date": xi.date,
        "n": xi.n,
        "ds_model": ds_model,
        "ds_benchmark": ds_bench,
        "r2_first": list(r1),
        "r2_second": list(r2),
        "total_r2_term": fit,
        "rho_f": rho,
        "systematic_share": sys_share,
        "rank_over_n": est.m / xi.n,
        "portfolio_return": float(weights @ x),
        "predicted_sharpe": pred,
    }
    if reference is not None:
        ref = reference(xi)
        out["ds_reference"] = dawid_sebastiani(x, ref.mu, ref)
    return out


def _run_window(panel, cfg, k, reference):
    s = k * cfg.step
    tr_end = s + cfg.train_months
    va_end = tr_end + cfg.val_months
    te_end = va_end + cfg.test_months
    dates = panel.dates
    record = {
        "window": k,
        "train": [dates[s], dates[tr_end - 1]],
        "val": [dates[tr_end], dates[va_end - 1]] if cfg.val_months else [],
        "test_dates": dates[va_end:te_end],
        "models": {},
        "params": {},
    }
    try:
        train = _points(panel, s, tr_end)
        val = _points(panel, tr_end, va_end)
        test = _points(panel, va_end, te_end)
    except DataError as exc:
        record["skipped"] = f"window {k}: {exc}"
        return record
    fit_points = train + val if cfg.refit == "train+val" else train
    fit_stop = va_end if cfg.refit == "train+val" else tr_end
    Z_train = panel.stacked_covariates(s, tr_end)
    Z_fit = panel.stacked_covariates(s, fit_stop)
    sigma2 = benchmark_sigma(fit_points)
    record["sigma2_bm"] = sigma2
    for m in cfg.m_sy:
        name = f"coco_m{m}"
        model = {"grid": []}
        kern = cfg.kernel_sy
        if kern.kind == "gaussian":
            rho0 = median_heuristic(Z_train)
            grid = [KernelSpec("gaussian", g * rho0) for g in cfg.rho_grid] if val else [KernelSpec("gaussian", rho0)]
        else:
            grid = [kern]
        best = None
        try:
            for spec in grid:
                fs, fi, rep = _fit(train, cfg, m, spec, Z_train)
                score = _validation_score(rep, fs, fi, val) if (val and len(grid) > 1) else math.nan
                model["grid"].append({"rho": spec.rho, "val_score": score, "converged": rep.converged})
                if best is None or score < best[0]:
                    best = (score, spec, fs, fi, rep)
            _, spec, fs, fi, rep = best
            if cfg.refit == "train+val" and val:
                fs, fi, rep = _fit(fit_points, cfg, m, spec, Z_fit)
        except NumericalError as exc:
            model["error"] = f"window {k}, rank {m}: {exc}"
            record["models"][name] = model
            continue
        model.update({
            "kernel": spec.to_dict(),
            "rank": fs.rank,
            "trace_error": fs.trace_error,
            "iterations": rep.iterations,
            "grad_map_norm": rep.grad_map_norm,
            "objective": rep.objective,
            "converged": rep.converged,
        })
        V = rep.u_star.V
        months = []
        for xi in test:
            est = coco_moments(rep.u_star, fs, fi, xi)
            bench = benchmark_moments(sigma2, xi)
            months.append(_month_terms(xi, est, bench, V, cfg.id_weights, reference))
        model["test"] = months
        record["models"][name] = model
        record["params"][name] = {
            "solve": rep.to_dict(),
            "feature_sy": fs.to_dict(),
            "feature_id": fi.to_dict(),
        }
    return record


def _assemble(windows, cfg):
    terms = {}
    names = sorted({n for w in windows for n in w["models"]}, key=lambda n: (len(n), n))
    for name in names:
        rows = [t for w in windows for t in w["models"].get(name, {}).get("test", [])]
        if not rows:
            continue
        dates = [r["date"] for r in rows]
        r1 = np.array([r["r2_first"] for r in rows])
        r2 = np.array([r["r2_second"] for r in rows])
        terms[f"{name}/r2_first"] = MetricTerms.ratio(dates, r1[:, 0], r1[:, 1], f"{name}/r2_first")
        terms[f"{name}/r2_second"] = MetricTerms.ratio(dates, r2[:, 0], r2[:, 1], f"{name}/r2_second")
        terms[f"{name}/score_differential"] = MetricTerms.mean(
            dates, [r["ds_benchmark"] - r["ds_model"] for r in rows], f"{name}/score_differential")
        fit = [r["total_r2_term"] for r in rows]
        terms[f"{name}/total_r2"] = MetricTerms.one_minus_mean(dates, fit, f"{name}/total_r2")
        terms[f"{name}/rho_f"] = MetricTerms.mean(dates, [r["rho_f"] for r in rows], f"{name}/rho_f")
        terms[f"{name}/sharpe"] = MetricTerms.sharpe(dates, [r["portfolio_return"] for r in rows], f"{name}/sharpe")
        terms[f"{name}/predicted_sharpe"] = MetricTerms.mean(
            dates, [ANNUALIZE * r["predicted_sharpe"] for r in rows], f"{name}/predicted_sharpe")
        if "ds_reference" in rows[0]:
            terms[f"{name}/reference_score_differential"] = MetricTerms.mean(
                dates, [r["ds_benchmark"] - r["ds_reference"] for r in rows],
                f"{name}/reference_score_differential")
    series = []
    for t in terms.values():
        series.append(windowed(t, cfg.rolling_window))
        series.append(windowed(t, expanding=True))
    return terms, series


def run_backtest(panel, cfg=None, threads=1, reference=None):
    """Run every rolling window and assemble the metric series.

    ``reference`` optionally maps a data point to a reference
    :class:`MomentEstimate` (e.g. the population moments of a simulated
    panel); its scores are reported alongside the fitted model.
    """
    cfg = cfg or BacktestConfig()
    K = window_count(len(panel), cfg)
    if K == 0:
        raise DataError(
            f"panel has {len(panel)} periods; need at least "
            f"{cfg.train_months + cfg.val_months + cfg.test_months}"
        )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            windows = list(ex.map(lambda k: _run_window(panel, cfg, k, reference), range(K)))
    else:
        windows = [_run_window(panel, cfg, k, reference) for k in range(K)]
    skipped = [w["skipped"] for w in windows if "skipped" in w]
    skipped += [m["error"] for w in windows for m in w["models"].values() if "error" in m]
    kept = [w for w in windows if "skipped" not in w]
    terms, series = _assemble(kept, cfg)
    return BacktestReport(cfg, kept, terms, series, skipped)
