"""Command-line interface.

Subcommands: ingest, fit, backtest, simulate, asymptotics, report. Settings
come from an optional JSON config; flags override it. The resolved config is
written to the output directory and its hash heads every output file.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .backtest import BacktestConfig, config_hash, run_backtest
from .errors import DataError, NumericalError
from .evaluation import MetricSeries, MetricTerms, windowed, write_series_csv
from .features import KernelSpec, build_feature_map, constant_id_feature, median_heuristic
from .moments import coco_moments
from .objective import build_objective
from .panel import PreprocessOptions, cross_section, load_panel, preprocess, save_panel
from .simulate import (
    PopulationModel,
    asymptotics_experiment,
    gen_population,
    rate_slope,
    simulate_panel,
)
from .solver import SolverOptions, benchmark_sigma, solve

RATE_BAND = (-1.3, -0.7)


class UsageError(Exception):
    """Bad command line or configuration."""


@dataclass
class PanelSection:
    path: str = None
    schema: dict = field(default_factory=dict)
    min_observed: float = 0.30
    rank_transform: bool = False


@dataclass
class KernelSection:
    kind: str = "cosine"
    rho: float = None


@dataclass
class RanksSection:
    m_sy: list = field(default_factory=lambda: [5, 10, 20, 40])
    m_id: int = 1


@dataclass
class LambdaSection:
    sy: float = 0.0
    id: float = 0.0


@dataclass
class BacktestSection:
    train_months: int = 96
    val_months: int = 1
    test_months: int = 1
    step: int = 1
    rho_grid: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    refit: str = "train"
    mixing: str = "orthonormal"
    id_weights: str = "unit"
    rolling_window: int = 24


@dataclass
class SimulateSection:
    m: int = 3
    d: int = None
    T: int = 120
    n: int = 100
    u_id: float = None
    innovations: str = "normal"
    population: str = None
    T_list: list = field(default_factory=lambda: [100, 400, 1600, 6400])
    reps: int = 100
    n_asymptotics: int = 20
    features: str = "population"


@dataclass
class RunConfig:
    panel: PanelSection = field(default_factory=PanelSection)
    kernel_sy: KernelSection = field(default_factory=KernelSection)
    kernel_id: KernelSection = field(default_factory=lambda: KernelSection("constant"))
    ranks: RanksSection = field(default_factory=RanksSection)
    lambdas: LambdaSection = field(default_factory=LambdaSection)
    solver: dict = field(default_factory=dict)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d, "config")

    def to_dict(self):
        d = asdict(self)
        d["solver"] = self.solver_options().to_dict()
        return d

    def solver_options(self):
        bad = set(self.solver) - {f.name for f in fields(SolverOptions)}
        if bad:
            raise UsageError(f"unknown solver keys: {sorted(bad)}")
        return SolverOptions(**self.solver)

    def kernel(self, section):
        kind = section.kind
        rho = 1.0 if section.rho is None else float(section.rho)
        return KernelSpec(kind, rho)

    def backtest_config(self):
        b = self.backtest
        return BacktestConfig(
            train_months=b.train_months,
            val_months=b.val_months,
            test_months=b.test_months,
            step=b.step,
            m_sy=tuple(self.ranks.m_sy),
            m_id=self.ranks.m_id,
            kernel_sy=self.kernel(self.kernel_sy),
            kernel_id=self.kernel(self.kernel_id),
            rho_grid=tuple(b.rho_grid),
            lambda_sy=self.lambdas.sy,
            lambda_id=self.lambdas.id,
            refit=b.refit,
            mixing=b.mixing,
            id_weights=b.id_weights,
            rolling_window=b.rolling_window,
            solver=self.solver_options(),
        )


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise UsageError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise UsageError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in d.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if default is not None and hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _load_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"{args.config}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
    cfg = RunConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.output_dir = args.out
    if args.kernel is not None:
        cfg.kernel_sy.kind = args.kernel
    if args.rho is not None:
        cfg.kernel_sy.rho = args.rho
    if args.m_sy is not None:
        cfg.ranks.m_sy = [args.m_sy]
    if getattr(args, "panel", None):
        cfg.panel.path = args.panel
    if cfg.threads < 1:
        raise UsageError("--threads must be at least 1")
    try:
        cfg.backtest_config()
        for sec in (cfg.kernel_sy, cfg.kernel_id):
            cfg.kernel(sec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return cfg


NOT_HASHED = ("threads", "output_dir")


def _prepare_out(cfg, command):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    # thread count and output location cannot change any result, so they stay out of the hash
    h = config_hash({"command": command, **{k: v for k, v in resolved.items() if k not in NOT_HASHED}})
    header = {"config_hash": h, "command": command}
    (out / "resolved_config.json").write_text(
        json.dumps({**header, "config": resolved}, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out, header


def _header_lines(header):
    return [f"{k}: {v}" for k, v in sorted(header.items())]


def _write_json(path, header, doc):
    Path(path).write_text(json.dumps({**header, **doc}, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_prepared(cfg):
    if not cfg.panel.path:
        raise UsageError("an input panel path is required")
    panel = load_panel(cfg.panel.path, cfg.panel.schema or None)
    return preprocess(panel, PreprocessOptions(cfg.panel.min_observed, cfg.panel.rank_transform))


def cmd_ingest(cfg):
    panel = _load_prepared(cfg)
    out, header = _prepare_out(cfg, "ingest")
    lines = _header_lines(header)
    save_panel(panel, out / "panel.csv", lines)
    with open(out / "sizes.csv", "w", newline="", encoding="utf-8") as fh:
        for line in lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "n"])
        for p in panel.periods:
            w.writerow([p.date, p.n])
    _write_json(out / "summary.json", header, {
        "periods": len(panel),
        "covariates": list(panel.covariate_names),
        "n_min": int(panel.sizes.min()),
        "n_max": int(panel.sizes.max()),
        "n_mean": float(panel.sizes.mean()),
        "log": panel.meta.get("log", []),
    })
    print(f"ingested {len(panel)} periods -> {out}")
    return 0


def cmd_fit(cfg):
    panel = _load_prepared(cfg)
    out, header = _prepare_out(cfg, "fit")
    points = [cross_section(panel, t) for t in range(len(panel))]
    Z = panel.stacked_covariates()
    spec = cfg.kernel(cfg.kernel_sy)
    if spec.kind == "gaussian" and cfg.kernel_sy.rho is None:
        spec = KernelSpec("gaussian", median_heuristic(Z))
    opts = cfg.solver_options()
    sigma2 = benchmark_sigma(points)
    models = {}
    series = []
    for m in cfg.ranks.m_sy:
        fs = build_feature_map(spec, Z, m, mixing_mode=cfg.backtest.mixing)
        if cfg.kernel_id.kind == "constant":
            fi = constant_id_feature()
        else:
            fi = build_feature_map(cfg.kernel(cfg.kernel_id), Z, cfg.ranks.m_id, mixing_mode=cfg.backtest.mixing)
        obj = build_objective(points, fs, fi, cfg.lambdas.sy, cfg.lambdas.id)
        rep = solve(obj, opts)
        name = f"coco_m{m}"
        num = den = 0.0
        nums, dens = [], []
        for xi in points:
            est = coco_moments(rep.u_star, fs, fi, xi)
            r = xi.returns - est.mu
            nums.append(xi.weight * float(r @ r))
            dens.append(xi.weight * float(xi.returns @ xi.returns))
        terms = MetricTerms.ratio(panel.dates, nums, dens, f"{name}/r2_first_in_sample")
        series.append(windowed(terms, expanding=True))
        models[name] = {
            "solve": rep.to_dict(),
            "feature_sy": fs.to_dict(),
            "feature_id": fi.to_dict(),
            "diagnostics": {
                "trace_error_sy": fs.trace_error,
                "rank_sy": fs.rank,
                "objective": rep.objective,
                "converged": rep.converged,
                "iterations": rep.iterations,
                "sigma2_benchmark": sigma2,
                "r2_first_in_sample": terms.value(),
            },
        }
        print(f"{name}: objective {rep.objective:.6g}, iterations {rep.iterations}, converged {rep.converged}")
    _write_json(out / "fit.json", header, {"models": models, "periods": len(panel)})
    write_series_csv(series, out / "metrics.csv", _header_lines(header))
    return 0


def cmd_backtest(cfg):
    panel = _load_prepared(cfg)
    out, header = _prepare_out(cfg, "backtest")
    report = run_backtest(panel, cfg.backtest_config(), threads=cfg.threads)
    report.write(out, header)
    for reason in report.skipped:
        print(f"skipped: {reason}", file=sys.stderr)
    print(f"{len(report.windows)} windows -> {out}")
    for name, value in report.summary().items():
        print(f"  {name}: {value}")
    return 0


def _population(cfg):
    s = cfg.simulate
    if s.population:
        try:
            return PopulationModel.load(s.population)
        except FileNotFoundError:
            raise DataError(f"{s.population}: population file not found") from None
    return gen_population(s.m, s.d, seed=cfg.seed, u_id=s.u_id)


def cmd_simulate(cfg):
    s = cfg.simulate
    out, header = _prepare_out(cfg, "simulate")
    pop = _population(cfg)
    panel = simulate_panel(pop, s.T, s.n, seed=cfg.seed, innovations=s.innovations)
    save_panel(panel, out / "panel.csv", _header_lines(header))
    _write_json(out / "population.json", header, pop.to_dict())
    print(f"simulated {s.T} months x {s.n} assets -> {out}")
    return 0


def cmd_asymptotics(cfg):
    s = cfg.simulate
    out, header = _prepare_out(cfg, "asymptotics")
    pop = _population(cfg)
    table = asymptotics_experiment(pop, tuple(s.T_list), s.reps, cfg.seed, cfg.solver_options(),
                                   n=s.n_asymptotics, threads=cfg.threads, features=s.features)
    with open(out / "asymptotics.csv", "w", newline="", encoding="utf-8") as fh:
        for line in _header_lines(header):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "rep", "log_dev", "valid", "converged"])
        for row in table:
            w.writerow([row["T"], row["rep"], repr(row["log_dev"]), int(row["valid"]), int(row["converged"])])
    slope, medians = rate_slope(table)
    ok = RATE_BAND[0] <= slope <= RATE_BAND[1]
    _write_json(out / "asymptotics_summary.json", header, {
        "slope": slope,
        "medians": {str(k): v for k, v in medians.items()},
        "band": list(RATE_BAND),
        "pass": ok,
        "invalid_cells": sum(not r["valid"] for r in table),
    })
    _write_json(out / "population.json", header, pop.to_dict())
    print(f"slope {slope:.4f} in [{RATE_BAND[0]}, {RATE_BAND[1]}]: {'PASS' if ok else 'FAIL'}")
    return 0


def _read_metrics(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != ["date", "metric", "window", "value"]:
        raise DataError(f"{path}: not a metrics file (header {reader.fieldnames})")
    for lineno, row in enumerate(reader, start=2):
        try:
            rows.append((row["date"], row["metric"], row["window"], float(row["value"])))
        except ValueError:
            raise DataError(f"{path}: line {lineno}: bad value {row['value']!r}") from None
    return rows


def cmd_report(cfg, inputs):
    if not inputs:
        raise UsageError("report needs at least one run directory or metrics file")
    out, header = _prepare_out(cfg, "report")
    merged = []
    for src in inputs:
        p = Path(src)
        path = p / "metrics.csv" if p.is_dir() else p
        if not path.exists():
            raise DataError(f"{path}: metrics file not found")
        merged.extend((str(src),) + r for r in _read_metrics(path))
    merged.sort(key=lambda r: (r[0], r[2], r[3], r[1]))
    with open(out / "metrics_merged.csv", "w", newline="", encoding="utf-8") as fh:
        for line in _header_lines(header):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "date", "metric", "window", "value"])
        for src, date, metric, window, value in merged:
            w.writerow([src, date, metric, window, repr(value)])
    print(f"merged {len(merged)} rows -> {out / 'metrics_merged.csv'}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--out", help="output directory")
    common.add_argument("--kernel", choices=["cosine", "gaussian", "laplace", "imq"],
                        help="systematic kernel family")
    common.add_argument("--m-sy", type=int, dest="m_sy", help="systematic rank")
    common.add_argument("--rho", type=float, help="kernel scale parameter")

    parser = _Parser(prog="coco", description="Joint conditional mean and covariance estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "fit", "backtest"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("panel", nargs="?", help="long-format CSV panel")
    sub.add_parser("simulate", parents=[common])
    sub.add_parser("asymptotics", parents=[common])
    p = sub.add_parser("report", parents=[common])
    p.add_argument("inputs", nargs="*", help="run directories or metrics.csv files")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        if args.command == "report":
            return cmd_report(cfg, args.inputs)
        return {
            "ingest": cmd_ingest,
            "fit": cmd_fit,
            "backtest": cmd_backtest,
            "simulate": cmd_simulate,
            "asymptotics": cmd_asymptotics,
        }[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
