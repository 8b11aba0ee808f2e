"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 best-response iteration did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .empirics import (
    MARKET_COLUMNS,
    bucket_label,
    bucket_shares,
    event_study,
    fit_da_price,
    fit_rt_price,
    load_event_csv,
    load_market_csv,
    parse_timestamp,
    synthesize_series,
    write_market_csv,
)
from .market_core import ValidationError, settle_two_stage, social_optimum
from .scenario import Scenario, load_scenario
from .strategic_play import (
    LoadProfile,
    cournot_best_response_iterate,
    cournot_closed_form,
    real_da_load_share,
    single_load_optimum,
)

log = logging.getLogger("twostage")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3

SWEEP_COLUMNS = ("L", "V", "total_da", "total_rt", "spread", "efficiency_gap", "real_da_share")
EFFICIENCY_TOL = 1e-7


@dataclass
class Report:
    payload: Any
    rows: list[dict] | None = None
    columns: Sequence[str] | None = None
    exit_code: int = EXIT_OK


# -- formatting ------------------------------------------------------------

def _fmt_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.payload, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if report.rows is not None:
        cols = list(report.columns or report.rows[0].keys())
        writer.writerow(cols)
        for row in report.rows:
            writer.writerow([_fmt_cell(row[c]) for c in cols])
    else:
        writer.writerow(["key", "value"])
        for k, v in _flatten(report.payload):
            writer.writerow([k, _fmt_cell(v)])
    return buf.getvalue()


# -- commands --------------------------------------------------------------

def _need_scenario(args) -> Scenario:
    if not args.scenario:
        raise ValidationError("--scenario is required for this command")
    return load_scenario(args.scenario)


def _need_loads(sc: Scenario) -> LoadProfile:
    if sc.loads is None:
        raise ValidationError("scenario has no loads")
    return sc.loads


def _efficient(outcome) -> bool:
    scale = max(1.0, abs(outcome.total_cost))
    price_scale = max(1.0, abs(outcome.day_ahead.price))
    return abs(outcome.spread) <= EFFICIENCY_TOL * price_scale and outcome.efficiency_gap <= EFFICIENCY_TOL * scale


def cmd_clear(args) -> Report:
    sc = _need_scenario(args)
    d_da = args.d_da if args.d_da is not None else sc.clear.get("d_da")
    d_rt = args.d_rt if args.d_rt is not None else sc.clear.get("d_rt", 0.0)
    if d_da is None:
        raise ValidationError("day-ahead demand not given (use --d-da or clear.d_da in the scenario)")
    outcome = settle_two_stage(sc.fleet, float(d_da), float(d_rt))
    payload = outcome.to_dict()
    payload["efficient"] = _efficient(outcome)
    return Report(payload)


def cmd_optimum(args) -> Report:
    sc = _need_scenario(args)
    d = args.demand if args.demand is not None else _need_loads(sc).total
    return Report(social_optimum(sc.fleet, float(d)).to_dict())


def cmd_equilibrium(args) -> Report:
    sc = _need_scenario(args)
    loads = _need_loads(sc)
    V = sc.virtual_count
    closed = cournot_closed_form(sc.fleet, loads, V)
    start = None
    if args.seed is not None:
        rng = np.random.default_rng(args.seed)
        start = list(rng.uniform(0.0, 1.0, loads.L) * np.array(loads.demands))
        start += list(rng.uniform(0.0, 1.0, V) * loads.total)
    iterated = cournot_best_response_iterate(sc.fleet, loads, V, tol=sc.tol, max_iter=sc.max_iter, start=start)
    gap = max(abs(a.da - b.da) for a, b in zip(closed.decisions, iterated.decisions))
    c = sc.fleet.coefficients
    payload = {
        "L": loads.L,
        "V": V,
        "alpha_da": c.alpha_da,
        "beta_da": c.beta_da,
        "alpha_rt": c.alpha_rt,
        "closed_form": closed.to_dict(),
        "best_response": iterated.to_dict(),
        "max_discrepancy": gap,
        "real_da_share": real_da_load_share(c.alpha_da, c.alpha_rt, loads.L, V),
    }
    if loads.L == 1 and V == 0:
        payload["single_load_optimum"] = single_load_optimum(sc.fleet, loads.demands[0]).to_dict()
    rows = [
        {"player": i, "is_virtual": a.is_virtual, "da_closed_form": a.da, "rt_closed_form": a.rt,
         "da_best_response": b.da, "rt_best_response": b.rt}
        for i, (a, b) in enumerate(zip(closed.decisions, iterated.decisions))
    ]
    code = EXIT_OK if iterated.converged else EXIT_NOT_CONVERGED
    return Report(payload, rows=rows, exit_code=code)


def sweep_rows(sc: Scenario) -> list[dict]:
    if sc.sweep is None:
        raise ValidationError("scenario has no sweep section")
    loads = _need_loads(sc)
    c = sc.fleet.coefficients
    rows = []
    for value in sc.sweep.values:
        profile, V = loads, sc.virtual_count
        if sc.sweep.parameter == "L":
            profile = LoadProfile.even(loads.total, int(value))
        elif sc.sweep.parameter == "V":
            V = int(value)
        else:
            profile = LoadProfile(tuple(d * value for d in loads.demands))
        eq = cournot_closed_form(c, profile, V)
        settled = settle_two_stage(sc.fleet, eq.total_da, eq.total_rt)
        rows.append({
            "L": profile.L,
            "V": V,
            "total_da": eq.total_da,
            "total_rt": eq.total_rt,
            "spread": eq.spread,
            "efficiency_gap": settled.efficiency_gap,
            "real_da_share": eq.real_da_total / profile.total,
        })
    return rows


def cmd_sweep(args) -> Report:
    sc = _need_scenario(args)
    rows = sweep_rows(sc)
    payload = {"parameter": sc.sweep.parameter, "rows": rows}
    return Report(payload, rows=rows, columns=SWEEP_COLUMNS)


def _column_map(args, sc: Scenario | None) -> dict:
    mapping = dict(sc.columns) if sc else {}
    for item in args.columns or []:
        for pair in item.split(","):
            if "=" not in pair:
                raise ValidationError(f"--columns expects name=header pairs, got {pair!r}")
            k, v = pair.split("=", 1)
            mapping[k.strip()] = v.strip()
    return mapping


def _exclusions(args, sc: Scenario | None):
    out = list(sc.exclusions) if sc else []
    for item in args.exclude or []:
        if "/" not in item:
            raise ValidationError(f"--exclude expects START/END, got {item!r}")
        start, end = item.split("/", 1)
        try:
            out.append((parse_timestamp(start), parse_timestamp(end)))
        except ValueError:
            raise ValidationError(f"--exclude: cannot parse {item!r}") from None
    return out


def cmd_fit(args) -> Report:
    sc = load_scenario(args.scenario) if args.scenario else None
    series = load_market_csv(args.data, _column_map(args, sc), _exclusions(args, sc))
    fit = fit_da_price(series) if args.model == "da" else fit_rt_price(series)
    payload = {"model": args.model, "excluded_records": len(series) - len(series.included), **fit.to_dict()}
    rows = [
        {"coefficient": k, "estimate": fit.coefficients[k], "std_error": fit.std_errors[k],
         "p_value": fit.p_values[k], "rmse": fit.rmse, "r_squared": fit.r_squared, "n": fit.n}
        for k in fit.coefficients
    ]
    return Report(payload, rows=rows)


def cmd_event_study(args) -> Report:
    sc = load_scenario(args.scenario) if args.scenario else None
    ts, da, total = load_event_csv(args.data, _column_map(args, sc))
    try:
        break_ts = parse_timestamp(args.break_date)
    except ValueError:
        raise ValidationError(f"cannot parse break date {args.break_date!r}") from None
    buckets = bucket_shares(ts, da, total, args.bucket)
    result = event_study(buckets, bucket_label(break_ts, args.bucket))
    payload = {"bucket": args.bucket, **result.to_dict()}
    rows = [{"period": p, "da_real_load_share": s} for p, s in result.series.buckets]
    return Report(payload, rows=rows)


def cmd_synthesize(args) -> Report:
    sc = _need_scenario(args)
    loads = _need_loads(sc)
    if args.seed is None:
        raise ValidationError("synthesize needs --seed")
    noise = (args.noise, args.noise_rt if args.noise_rt is not None else args.noise)
    series = synthesize_series(sc.fleet, loads, sc.virtual_count, args.n, noise, args.seed)
    rows = [{"timestamp": r.timestamp.isoformat(), "da_load": r.da_load, "rt_load": r.rt_load,
             "da_price": r.da_price, "rt_price": r.rt_price} for r in series.records]
    return Report({"records": rows}, rows=rows, columns=MARKET_COLUMNS)


# -- argument parsing ------------------------------------------------------

def _common(sub: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    sub.add_argument("--scenario", metavar="PATH", default=default, help="scenario YAML file")
    sub.add_argument("--format", choices=("json", "csv"), default=default, help="output format")
    sub.add_argument("--out", metavar="PATH", default=default, help="write output here instead of stdout")
    sub.add_argument("--seed", type=int, metavar="N", default=default, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostage", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser, suppress=False)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("clear", help="settle a day-ahead / real-time demand split")
    _common(p, suppress=True)
    p.add_argument("--d-da", type=float, help="day-ahead demand (MW)")
    p.add_argument("--d-rt", type=float, help="real-time demand (MW), default 0")
    p.set_defaults(func=cmd_clear)

    p = subs.add_parser("optimum", help="social-cost minimising dispatch")
    _common(p, suppress=True)
    p.add_argument("--demand", type=float, help="total demand (MW), default: sum of scenario loads")
    p.set_defaults(func=cmd_optimum)

    p = subs.add_parser("equilibrium", help="load-side Cournot equilibrium, closed form and iterated")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_equilibrium)

    p = subs.add_parser("sweep", help="equilibrium outcomes over L, V or demand scale")
    _common(p, suppress=True)
    p.set_defaults(func=cmd_sweep)

    for name, func, text in (("fit", cmd_fit, "price regressions on market data"),
                             ("event-study", cmd_event_study, "day-ahead real-load share around a break")):
        p = subs.add_parser(name, help=text)
        _common(p, suppress=True)
        p.add_argument("--data", required=True, metavar="PATH", help="CSV input")
        p.add_argument("--columns", action="append", metavar="NAME=HEADER[,...]",
                       help="map canonical column names to the file's headers")
        if name == "fit":
            p.add_argument("--model", choices=("da", "rt"), required=True)
            p.add_argument("--exclude", action="append", metavar="START/END",
                           help="exclude records in this closed timestamp range (repeatable)")
        else:
            p.add_argument("--break-date", required=True, help="first date with virtual bidding")
            p.add_argument("--bucket", choices=("day", "week", "month", "quarter"), default="month")
        p.set_defaults(func=func)

    p = subs.add_parser("synthesize", help="seeded synthetic market series from the scenario")
    _common(p, suppress=True)
    p.add_argument("--n", type=int, default=1000, help="number of hourly records")
    p.add_argument("--noise", type=float, default=0.0, help="price noise sigma")
    p.add_argument("--noise-rt", type=float, help="real-time price noise sigma (default: --noise)")
    p.set_defaults(func=cmd_synthesize, format_default="csv")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        report = args.func(args)
        # --format, then the verb's own default (synthesize writes data), then the scenario
        fmt = args.format or getattr(args, "format_default", None)
        if fmt is None and args.scenario:
            fmt = load_scenario(args.scenario).format
        fmt = fmt or "json"
        text = render(report, fmt)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if report.exit_code == EXIT_NOT_CONVERGED:
        print("error: best-response iteration did not converge", file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
