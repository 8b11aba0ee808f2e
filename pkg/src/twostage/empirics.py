"""Market time series, price-formation regressions and the virtual-bidding event study."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .market_core import Fleet, PricingCoefficients, ValidationError
from .special import t_ppf, t_two_sided_p
from .strategic_play import LoadProfile, cournot_closed_form

__all__ = [
    "CsvFormatError",
    "MarketRecord",
    "MarketSeries",
    "RegressionFit",
    "EventStudySeries",
    "EventStudyResult",
    "MARKET_COLUMNS",
    "parse_timestamp",
    "read_csv_rows",
    "load_market_csv",
    "write_market_csv",
    "ols",
    "fit_da_price",
    "fit_rt_price",
    "synthesize_series",
    "bucket_label",
    "bucket_shares",
    "load_event_csv",
    "event_study",
]

log = logging.getLogger(__name__)

MARKET_COLUMNS = ("timestamp", "da_load", "rt_load", "da_price", "rt_price")


class CsvFormatError(ValidationError):
    """Malformed input file; ``problems`` lists ``(line, column, message)``."""

    def __init__(self, path, problems):
        self.path = str(path)
        self.problems = list(problems)
        lines = [f"{self.path}: {len(self.problems)} problem(s)"]
        for line, column, message in self.problems[:20]:
            where = f"line {line}" + (f", column {column!r}" if column else "")
            lines.append(f"  {where}: {message}")
        if len(self.problems) > 20:
            lines.append(f"  ... {len(self.problems) - 20} more")
        super().__init__("\n".join(lines))


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


@dataclass(frozen=True)
class MarketRecord:
    timestamp: datetime
    da_load: float
    rt_load: float
    da_price: float
    rt_price: float
    excluded: bool = False


@dataclass(frozen=True)
class MarketSeries:
    records: tuple[MarketRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        for prev, cur in zip(records, records[1:]):
            if not cur.timestamp > prev.timestamp:
                raise ValidationError(f"non-increasing timestamps at {cur.timestamp.isoformat()}")
        for r in records:
            if not all(math.isfinite(v) for v in (r.da_load, r.rt_load, r.da_price, r.rt_price)):
                raise ValidationError(f"non-finite value at {r.timestamp.isoformat()}")

    def __len__(self):
        return len(self.records)

    @property
    def included(self) -> tuple[MarketRecord, ...]:
        return tuple(r for r in self.records if not r.excluded)

    def column(self, name: str, include_excluded: bool = False) -> np.ndarray:
        rows = self.records if include_excluded else self.included
        return np.array([getattr(r, name) for r in rows], dtype=float)

    def exclude(self, ranges: Iterable[tuple[datetime, datetime]]) -> "MarketSeries":
        """Flag every record whose timestamp falls in one of the closed ``[start, end]`` ranges."""
        ranges = list(ranges)
        out = []
        for r in self.records:
            hit = any(start <= r.timestamp <= end for start, end in ranges)
            out.append(replace(r, excluded=r.excluded or hit))
        return MarketSeries(tuple(out))


def read_csv_rows(path: str | Path) -> tuple[list[str], list[tuple[int, dict]]]:
    """Header and ``(line_number, row)`` pairs of a CSV file."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        rows = [(reader.line_num, row) for row in reader]
    return header, rows


def load_market_csv(
    path: str | Path,
    column_map: Mapping[str, str] | None = None,
    exclusions: Iterable[tuple[datetime, datetime]] = (),
) -> MarketSeries:
    """Read a market series from CSV.

    ``column_map`` maps the canonical names (``timestamp``, ``da_load``,
    ``rt_load``, ``da_price``, ``rt_price``) to the file's header names.
    Every bad cell is reported with its line number; nothing is dropped
    silently.  Rows come back sorted by time.
    """
    column_map = dict(column_map or {})
    unknown = set(column_map) - set(MARKET_COLUMNS)
    if unknown:
        raise ValidationError(f"unknown column mapping(s): {sorted(unknown)}")
    source = {c: column_map.get(c, c) for c in MARKET_COLUMNS}
    header, rows = read_csv_rows(path)
    missing = [src for src in source.values() if src not in header]
    if missing:
        raise CsvFormatError(path, [(1, m, "column missing from header") for m in missing])

    problems = []
    records = []
    for line, row in rows:
        values = {}
        for canon, src in source.items():
            cell = (row.get(src) or "").strip()
            if not cell:
                problems.append((line, src, "empty value"))
                continue
            try:
                if canon == "timestamp":
                    values[canon] = parse_timestamp(cell)
                else:
                    v = float(cell)
                    if not math.isfinite(v):
                        raise ValueError
                    values[canon] = v
            except ValueError:
                problems.append((line, src, f"cannot parse {cell!r}"))
        if len(values) == len(source):
            records.append((line, MarketRecord(**values)))
    if problems:
        raise CsvFormatError(path, problems)
    if not records:
        raise ValidationError(f"{path}: no data rows")

    records.sort(key=lambda item: item[1].timestamp)
    for (_, prev), (line, cur) in zip(records, records[1:]):
        if cur.timestamp == prev.timestamp:
            raise CsvFormatError(path, [(line, source["timestamp"],
                                         f"non-increasing timestamps ({cur.timestamp.isoformat()} repeated)")])
    series = MarketSeries(tuple(r for _, r in records))
    if exclusions:
        series = series.exclude(exclusions)
    return series


def write_market_csv(series: MarketSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MARKET_COLUMNS)
        for r in series.records:
            w.writerow([r.timestamp.isoformat(), repr(r.da_load), repr(r.rt_load),
                        repr(r.da_price), repr(r.rt_price)])


# -- regression -----------------------------------------------------------

@dataclass(frozen=True)
class RegressionFit:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    t_values: dict[str, float]
    p_values: dict[str, float]
    rmse: float
    r_squared: float
    n: int
    dof: int
    checks: dict = field(default_factory=dict)

    def conf_int(self, level: float = 0.95) -> dict[str, tuple[float, float]]:
        q = t_ppf(0.5 + level / 2.0, self.dof)
        return {k: (b - q * self.std_errors[k], b + q * self.std_errors[k])
                for k, b in self.coefficients.items()}

    def to_dict(self) -> dict:
        out = {
            "coefficients": dict(self.coefficients),
            "std_errors": dict(self.std_errors),
            "t_values": dict(self.t_values),
            "p_values": dict(self.p_values),
            "rmse": self.rmse,
            "r_squared": self.r_squared,
            "n": self.n,
            "dof": self.dof,
        }
        if self.checks:
            out["checks"] = dict(self.checks)
        return out


def ols(y: np.ndarray, X: np.ndarray, names: Sequence[str]) -> RegressionFit:
    """Ordinary least squares with classical (homoskedastic) inference.

    ``X`` must already hold an intercept column if one is wanted.  ``rmse``
    is the residual standard error ``sqrt(SSR / (n - k))``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if n <= k:
        raise ValidationError(f"need more than {k} observations, got {n}")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0) or np.linalg.matrix_rank(X) < k:
        raise ValidationError("degenerate design: regressors are collinear or constant")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    dof = n - k
    s2 = ssr / dof
    r_inv = np.linalg.inv(r)
    cov = s2 * (r_inv @ r_inv.T)
    se = np.sqrt(np.diag(cov))
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    tvals = np.divide(beta, se, out=np.full(k, np.inf), where=se > 0)
    tvals = np.where((se == 0) & (beta == 0), 0.0, tvals)
    return RegressionFit(
        coefficients={nm: float(b) for nm, b in zip(names, beta)},
        std_errors={nm: float(s) for nm, s in zip(names, se)},
        t_values={nm: float(t) for nm, t in zip(names, tvals)},
        p_values={nm: t_two_sided_p(float(t), dof) for nm, t in zip(names, tvals)},
        rmse=math.sqrt(s2),
        r_squared=r2,
        n=n,
        dof=dof,
    )


def fit_da_price(series: MarketSeries) -> RegressionFit:
    """Regress day-ahead price on day-ahead load: ``price = alpha_da * load + beta_da``."""
    rows = series.included
    if len(rows) < 3:
        raise ValidationError("day-ahead fit needs at least 3 included records")
    load = series.column("da_load")
    if np.ptp(load) == 0:
        raise ValidationError("degenerate design: day-ahead load is constant")
    X = np.column_stack([load, np.ones_like(load)])
    return ols(series.column("da_price"), X, ("alpha_da", "beta_da"))


def fit_rt_price(series: MarketSeries, level: float = 0.05) -> RegressionFit:
    """Regress ``rt_price`` on real-time load and day-ahead price with an intercept.

    ``checks`` records whether the day-ahead price coefficient is
    statistically indistinguishable from 1 at ``level`` and the sign of the
    intercept.
    """
    rows = series.included
    if len(rows) < 4:
        raise ValidationError("real-time fit needs at least 4 included records")
    X = np.column_stack([series.column("rt_load"), series.column("da_price"), np.ones(len(rows))])
    fit = ols(series.column("rt_price"), X, ("alpha_rt", "gamma", "delta"))
    gamma, se = fit.coefficients["gamma"], fit.std_errors["gamma"]
    if se > 0:
        p_unit = t_two_sided_p((gamma - 1.0) / se, fit.dof)
    else:
        p_unit = 1.0 if abs(gamma - 1.0) <= 1e-9 else 0.0
    delta = fit.coefficients["delta"]
    checks = {
        "gamma_minus_one": gamma - 1.0,
        "gamma_unit_p_value": p_unit,
        "gamma_near_one": p_unit >= level,
        "delta_sign": "negative" if delta < 0 else ("positive" if delta > 0 else "zero"),
    }
    return replace(fit, checks=checks)


def synthesize_series(
    market: Fleet | PricingCoefficients,
    loads: LoadProfile,
    virtual_count: int,
    n: int,
    noise_sigma: float | tuple[float, float],
    seed: int | np.random.Generator,
    *,
    demand_spread: float = 0.3,
    rt_deviation: float = 0.02,
    gamma: float = 1.0,
    delta: float = 0.0,
    start: datetime = datetime(2018, 1, 1),
) -> MarketSeries:
    """Hourly series generated by the equilibrium model plus price noise.

    Each hour scales every load by a common factor drawn from
    ``U(1 - demand_spread, 1 + demand_spread)``, solves the load-side
    equilibrium, and prices the resulting market totals.  Real-time load also
    gets an exogenous deviation ``N(0, (rt_deviation * total)^2)``; without it
    real-time load and day-ahead price move in lockstep and the real-time
    regression is not identifiable.  Price noise is iid Gaussian; pass a pair
    to use different sigmas for the day-ahead and real-time prices.
    ``gamma``/``delta`` override the unit slope and zero intercept on the
    day-ahead price in the real-time price law.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    sig_da, sig_rt = (noise_sigma, noise_sigma) if np.isscalar(noise_sigma) else noise_sigma
    if sig_da < 0 or sig_rt < 0:
        raise ValidationError("noise_sigma must be >= 0")
    if not 0 <= demand_spread < 1:
        raise ValidationError("demand_spread must lie in [0, 1)")
    c = market if isinstance(market, PricingCoefficients) else market.coefficients
    rng = np.random.default_rng(seed)
    base = np.array(loads.demands)

    scale = rng.uniform(1.0 - demand_spread, 1.0 + demand_spread, n)
    deviation = rng.standard_normal(n)
    eps_da = rng.standard_normal(n)
    eps_rt = rng.standard_normal(n)

    # equilibrium totals are linear in the common scale factor
    unit = cournot_closed_form(c, LoadProfile(tuple(base)), virtual_count)
    total = loads.total
    records = []
    for k in range(n):
        da_load = unit.total_da * scale[k]
        rt_load = unit.total_rt * scale[k] + rt_deviation * total * scale[k] * deviation[k]
        da_price = c.alpha_da * da_load + c.beta_da + sig_da * eps_da[k]
        rt_price = c.alpha_rt * rt_load + gamma * da_price + delta + sig_rt * eps_rt[k]
        records.append(MarketRecord(start + timedelta(hours=k), float(da_load), float(rt_load),
                                    float(da_price), float(rt_price)))
    return MarketSeries(tuple(records))


# -- event study ----------------------------------------------------------

@dataclass(frozen=True)
class EventStudySeries:
    buckets: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for label, share in self.buckets:
            if not 0.0 <= share <= 1.0:
                raise ValidationError(f"period {label}: share {share} outside [0, 1]")


@dataclass(frozen=True)
class EventStudyResult:
    series: EventStudySeries
    break_period: str
    pre_mean: float
    post_mean: float
    difference: float
    skipped: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "buckets": [{"period": p, "da_real_load_share": s} for p, s in self.series.buckets],
            "break_period": self.break_period,
            "pre_mean": self.pre_mean,
            "post_mean": self.post_mean,
            "difference": self.difference,
            "skipped": list(self.skipped),
        }


def bucket_label(ts: datetime, granularity: str = "month") -> str:
    if granularity == "month":
        return f"{ts.year:04d}-{ts.month:02d}"
    if granularity == "quarter":
        return f"{ts.year:04d}-Q{(ts.month - 1) // 3 + 1}"
    if granularity == "week":
        year, week, _ = ts.isocalendar()
        return f"{year:04d}-W{week:02d}"
    if granularity == "day":
        return ts.date().isoformat()
    raise ValidationError(f"unknown bucket granularity {granularity!r}")


def bucket_shares(
    timestamps: Sequence[datetime],
    da_real_load: Sequence[float],
    total_load: Sequence[float],
    granularity: str = "month",
) -> list[dict]:
    """Sum loads into calendar buckets, in chronological order."""
    sums: dict[str, list[float]] = {}
    order = sorted(range(len(timestamps)), key=lambda i: timestamps[i])
    for i in order:
        label = bucket_label(timestamps[i], granularity)
        acc = sums.setdefault(label, [0.0, 0.0])
        acc[0] += float(da_real_load[i])
        acc[1] += float(total_load[i])
    return [{"period": p, "da_real_load": a, "total_load": t} for p, (a, t) in sums.items()]


def load_event_csv(path: str | Path, column_map: Mapping[str, str] | None = None):
    """Read ``timestamp, da_real_load, total_load`` columns for the event study."""
    wanted = ("timestamp", "da_real_load", "total_load")
    column_map = dict(column_map or {})
    source = {c: column_map.get(c, c) for c in wanted}
    header, rows = read_csv_rows(path)
    missing = [s for s in source.values() if s not in header]
    if missing:
        raise CsvFormatError(path, [(1, m, "column missing from header") for m in missing])
    problems = []
    ts, da, tot = [], [], []
    for line, row in rows:
        try:
            t = parse_timestamp(row[source["timestamp"]] or "")
        except ValueError:
            problems.append((line, source["timestamp"], f"cannot parse {row[source['timestamp']]!r}"))
            continue
        vals = []
        for name in ("da_real_load", "total_load"):
            cell = (row[source[name]] or "").strip()
            try:
                vals.append(float(cell))
            except ValueError:
                problems.append((line, source[name], f"cannot parse {cell!r}"))
        if len(vals) == 2:
            ts.append(t)
            da.append(vals[0])
            tot.append(vals[1])
    if problems:
        raise CsvFormatError(path, problems)
    if not ts:
        raise ValidationError(f"{path}: no data rows")
    return ts, da, tot


def event_study(rows: Sequence[Mapping], break_period: str) -> EventStudyResult:
    """Compare the day-ahead real-load share before and after ``break_period``.

    ``rows`` are ``{period, da_real_load, total_load}`` in chronological
    order; ``break_period`` is the first period on the post side.  Rows with
    zero total load are skipped with a warning.
    """
    buckets = []
    skipped = []
    for row in rows:
        label = str(row["period"])
        total = float(row["total_load"])
        if total == 0:
            log.warning("period %s has zero total load; excluded", label)
            skipped.append(label)
            continue
        buckets.append((label, float(row["da_real_load"]) / total))
    labels = [b[0] for b in buckets]
    if str(break_period) not in labels:
        raise ValidationError(f"break period {break_period!r} not among the periods")
    cut = labels.index(str(break_period))
    pre = [s for _, s in buckets[:cut]]
    post = [s for _, s in buckets[cut:]]
    if len(pre) < 2 or len(post) < 2:
        raise ValidationError("event study needs at least 2 periods on each side of the break")
    pre_mean = math.fsum(pre) / len(pre)
    post_mean = math.fsum(post) / len(post)
    return EventStudyResult(
        series=EventStudySeries(tuple(buckets)),
        break_period=str(break_period),
        pre_mean=pre_mean,
        post_mean=post_mean,
        difference=post_mean - pre_mean,
        skipped=tuple(skipped),
    )
