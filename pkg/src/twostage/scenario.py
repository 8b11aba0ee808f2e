"""Scenario files: fleet, loads, virtual bidders, sweep and solver settings (YAML)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any

import yaml

from .empirics import parse_timestamp
from .market_core import Fleet, ValidationError
from .strategic_play import DEFAULT_MAX_ITER, DEFAULT_TOL, LoadProfile

SWEEP_PARAMETERS = ("L", "V", "demand_scale")
_TOP_LEVEL = {"fleet", "loads", "virtual_count", "sweep", "solver", "format", "clear",
              "exclusions", "columns"}


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class Scenario:
    fleet: Fleet
    loads: LoadProfile | None = None
    virtual_count: int = 0
    sweep: SweepSpec | None = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    format: str | None = None
    clear: dict = field(default_factory=dict)
    exclusions: tuple[tuple[datetime, datetime], ...] = ()
    columns: dict = field(default_factory=dict)


def _number(value: Any, where: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ValidationError(f"{where}: must be finite")
    return out


def _integer(value: Any, where: str) -> int:
    out = _number(value, where)
    if out != int(out):
        raise ValidationError(f"{where}: expected an integer, got {value!r}")
    return int(out)


def _sweep(raw: Any) -> SweepSpec:
    if not isinstance(raw, dict):
        raise ValidationError("sweep: expected a mapping")
    param = raw.get("parameter")
    if param not in SWEEP_PARAMETERS:
        raise ValidationError(f"sweep.parameter must be one of {SWEEP_PARAMETERS}, got {param!r}")
    if "values" in raw:
        values = [_number(v, "sweep.values") for v in raw["values"]]
    else:
        start = _number(raw.get("start"), "sweep.start")
        stop = _number(raw.get("stop"), "sweep.stop")
        step = _number(raw.get("step", 1), "sweep.step")
        if step <= 0:
            raise ValidationError("sweep.step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [start + i * step for i in range(max(count, 0))]
    if not values:
        raise ValidationError("sweep range is empty")
    if param in ("L", "V"):
        values = [_integer(v, f"sweep ({param})") for v in values]
        low = 1 if param == "L" else 0
        if min(values) < low:
            raise ValidationError(f"sweep values for {param} must be >= {low}")
    elif min(values) <= 0:
        raise ValidationError("demand_scale values must be positive")
    return SweepSpec(param, tuple(values))


def parse_scenario(data: Any) -> Scenario:
    if not isinstance(data, dict):
        raise ValidationError("scenario must be a mapping at the top level")
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ValidationError(f"unknown scenario key(s): {sorted(unknown)}")
    if "fleet" not in data:
        raise ValidationError("scenario has no fleet")
    fleet = Fleet.from_records(data["fleet"] or [])
    loads = None
    if data.get("loads") is not None:
        loads = LoadProfile(tuple(_number(d, "loads") for d in data["loads"]))
    v = _integer(data.get("virtual_count", 0), "virtual_count")
    if v < 0:
        raise ValidationError("virtual_count must be >= 0")
    solver = data.get("solver") or {}
    tol = _number(solver.get("tol", DEFAULT_TOL), "solver.tol")
    max_iter = _integer(solver.get("max_iter", DEFAULT_MAX_ITER), "solver.max_iter")
    if tol <= 0 or max_iter < 1:
        raise ValidationError("solver.tol must be > 0 and solver.max_iter >= 1")
    fmt = data.get("format")
    if fmt is not None and fmt not in ("json", "csv"):
        raise ValidationError(f"format must be json or csv, got {fmt!r}")
    exclusions = []
    for item in data.get("exclusions") or []:
        try:
            exclusions.append((parse_timestamp(str(item["start"])), parse_timestamp(str(item["end"]))))
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"exclusions: bad entry {item!r}") from None
    return Scenario(
        fleet=fleet,
        loads=loads,
        virtual_count=v,
        sweep=_sweep(data["sweep"]) if data.get("sweep") is not None else None,
        tol=tol,
        max_iter=max_iter,
        format=fmt,
        clear=dict(data.get("clear") or {}),
        exclusions=tuple(exclusions),
        columns={str(k): str(val) for k, val in (data.get("columns") or {}).items()},
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML: {exc}") from None
    return parse_scenario(data)

