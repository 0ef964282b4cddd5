"""Unbalanced panel data model, CSV ingestion and preprocessing.

A panel is a sequence of periods. Period ``t`` carries the covariates ``z_t``
observed at ``t`` and the excess returns ``x_{t+1}`` realised over
``(t, t+1]``, so each period is one data point for the estimator.

The on-disk format is long CSV with a header::

    date,asset_id,ret,z_1,...,z_d

Empty cells and ``.`` are missing covariates. Dates are opaque labels sorted
lexicographically (ISO ``YYYY-MM`` sorts correctly).
"""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError

MISSING_TOKENS = frozenset({"", "."})


@dataclass(frozen=True)
class PeriodRecord:
    """One cross section: ``n`` assets with returns and covariate rows.

    ``covariates`` may hold NaN for missing cells before preprocessing.
    ``imputed`` marks cells filled in by :func:`preprocess`; they are treated
    as missing again if the panel is preprocessed a second time.
    """

    date: str
    asset_ids: tuple
    returns: np.ndarray
    covariates: np.ndarray
    imputed: np.ndarray = None

    @property
    def n(self):
        return len(self.asset_ids)

    def observed_mask(self):
        mask = np.isfinite(self.covariates)
        if self.imputed is not None:
            mask &= ~self.imputed
        return mask


@dataclass(frozen=True)
class Panel:
    periods: tuple
    covariate_names: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dates = [p.date for p in self.periods]
        if any(a >= b for a, b in zip(dates, dates[1:])):
            raise DataError("panel periods must be strictly increasing by date")
        d = len(self.covariate_names)
        for p in self.periods:
            if p.n < 1:
                raise DataError(f"period {p.date} has no assets")
            if p.covariates.shape != (p.n, d):
                raise DataError(
                    f"period {p.date}: covariate block has shape {p.covariates.shape}, "
                    f"expected ({p.n}, {d})"
                )
            if len(set(p.asset_ids)) != p.n:
                raise DataError(f"period {p.date}: duplicate asset identifiers")

    def __len__(self):
        return len(self.periods)

    @property
    def dates(self):
        return [p.date for p in self.periods]

    @property
    def sizes(self):
        return np.array([p.n for p in self.periods], dtype=int)

    @property
    def d(self):
        return len(self.covariate_names)

    def subset(self, start, stop):
        """Periods ``start:stop`` as a new panel sharing the metadata."""
        return replace(self, periods=tuple(self.periods[start:stop]))

    def stacked_covariates(self, start=0, stop=None):
        """All covariate rows of periods ``start:stop`` stacked vertically."""
        blocks = [p.covariates for p in self.periods[start:stop]]
        return np.vstack(blocks)


@dataclass(frozen=True)
class DataPoint:
    """One cross section as seen by the estimator."""

    n: int
    returns: np.ndarray
    covariates: np.ndarray
    weight: float
    date: str = ""

    def __post_init__(self):
        if self.weight <= 0:
            raise DataError("data point weight must be positive")


@dataclass(frozen=True)
class PreprocessOptions:
    min_observed: float = 0.30
    rank_transform: bool = False


def _parse_float(token, lineno, column):
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"line {lineno}: column {column!r} is not numeric: {token!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: column {column!r} is not finite: {token!r}")
    return value


def load_panel(path, schema=None):
    """Read a long-format CSV panel.

    ``schema`` optionally renames the key columns, e.g.
    ``{"date": "yyyymm", "asset_id": "permno", "ret": "xret"}``. Every other
    column is a numeric covariate.
    """
    path = Path(path)
    schema = {"date": "date", "asset_id": "asset_id", "ret": "ret", **(schema or {})}
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        # leading "# key: value" lines carry provenance and are skipped
        offset = 0
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            offset += 1
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [schema[k] for k in ("date", "asset_id", "ret") if schema[k] not in header]
        if missing:
            raise DataError(f"{path}: missing required column(s) {missing}")
        i_date = header.index(schema["date"])
        i_id = header.index(schema["asset_id"])
        i_ret = header.index(schema["ret"])
        cov_idx = [i for i in range(len(header)) if i not in (i_date, i_id, i_ret)]
        cov_names = tuple(header[i] for i in cov_idx)

        groups = {}
        seen = set()
        for lineno, row in enumerate(reader, start=offset + 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            date = row[i_date].strip()
            asset = row[i_id].strip()
            if not date or not asset:
                raise DataError(f"{path}: line {lineno}: empty date or asset_id")
            if (date, asset) in seen:
                raise DataError(f"{path}: line {lineno}: duplicate (date, asset_id) = ({date}, {asset})")
            seen.add((date, asset))
            ret_token = row[i_ret].strip()
            if ret_token in MISSING_TOKENS:
                raise DataError(f"{path}: line {lineno}: missing return")
            try:
                ret = _parse_float(ret_token, lineno, schema["ret"])
                covs = [
                    math.nan if row[i].strip() in MISSING_TOKENS
                    else _parse_float(row[i].strip(), lineno, header[i])
                    for i in cov_idx
                ]
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
            groups.setdefault(date, []).append((asset, ret, covs))

    if not groups:
        raise DataError(f"{path}: no data rows")
    periods = []
    for date in sorted(groups):
        rows = groups[date]
        periods.append(
            PeriodRecord(
                date=date,
                asset_ids=tuple(r[0] for r in rows),
                returns=np.array([r[1] for r in rows], dtype=float),
                covariates=np.array([r[2] for r in rows], dtype=float).reshape(len(rows), len(cov_names)),
            )
        )
    return Panel(tuple(periods), cov_names, {"source": str(path), "log": []})


def save_panel(panel, path, header_lines=()):
    """Write ``panel`` in the long CSV format; floats use ``repr`` so they round-trip.

    ``header_lines`` are written first as ``# ...`` comment lines.
    """
    path = Path(path)

    def fmt(v):
        return "" if not math.isfinite(v) else repr(float(v))

    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "asset_id", "ret", *panel.covariate_names])
        for p in panel.periods:
            for i, asset in enumerate(p.asset_ids):
                writer.writerow([p.date, asset, fmt(p.returns[i]), *(fmt(v) for v in p.covariates[i])])


def _rank_to_unit(values):
    """Average ranks mapped linearly onto [-1, 1]; a single value maps to 0."""
    n = len(values)
    if n == 1:
        return np.zeros(1)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    return 2.0 * ranks / (n - 1) - 1.0


def preprocess(panel, opts=None):
    """Filter sparse periods, optionally rank-transform, impute medians.

    Periods whose observed covariate fraction is below ``opts.min_observed``
    are dropped. Missing cells are filled with the per-period cross-sectional
    median of the (possibly rank-transformed) column; a column with nothing
    observed in a period is filled with 0.
    """
    opts = opts or PreprocessOptions()
    if len(panel) == 0:
        raise DataError("cannot preprocess an empty panel")
    log = list(panel.meta.get("log", []))
    kept = []
    d = panel.d
    for p in panel.periods:
        observed = p.observed_mask()
        frac = observed.mean() if d > 0 else 1.0
        if frac < opts.min_observed:
            log.append(f"dropped {p.date}: observed fraction {frac:.3f} < {opts.min_observed}")
            continue
        cov = np.where(observed, p.covariates, np.nan)
        for j in range(d):
            col = cov[:, j]
            obs = observed[:, j]
            if opts.rank_transform and obs.any():
                col[obs] = _rank_to_unit(col[obs])
            if not obs.all():
                fill = float(np.median(col[obs])) if obs.any() else 0.0
                col[~obs] = fill
        kept.append(replace(p, covariates=cov, imputed=~observed))
    if not kept:
        raise DataError("preprocessing dropped every period")
    log.append(
        f"preprocess: min_observed={opts.min_observed}, rank_transform={opts.rank_transform}, "
        f"kept {len(kept)}/{len(panel)} periods"
    )
    meta = {**panel.meta, "log": log, "rank_transform": opts.rank_transform,
            "min_observed": opts.min_observed}
    return Panel(tuple(kept), panel.covariate_names, meta)


def cross_section(panel, t):
    """Data point of period ``t`` with the default weight ``1 / N_t``."""
    if not 0 <= t < len(panel):
        raise IndexError(f"period index {t} out of range for panel of length {len(panel)}")
    p = panel.periods[t]
    if not np.all(np.isfinite(p.covariates)):
        raise DataError(f"period {p.date}: covariates contain missing values; run preprocess first")
    return DataPoint(n=p.n, returns=p.returns, covariates=p.covariates, weight=1.0 / p.n, date=p.date)
