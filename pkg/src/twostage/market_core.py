"""Generator fleets and two-stage (day-ahead / real-time) market clearing.

Every generator has a quadratic cost ``alpha/2 * x**2 + beta * x`` with
``alpha > 0``.  Fast units take part in both markets, slow units only in the
day-ahead market.  Quantities are MW over a one-hour interval, so energy and
power coincide numerically; prices are currency/MWh.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "GeneratorKind",
    "Stage",
    "Generator",
    "PricingCoefficients",
    "Fleet",
    "ClearingOutcome",
    "TwoStageOutcome",
    "aggregate_coefficients",
    "solve_bounded_eq_qp",
    "clear_day_ahead",
    "clear_real_time",
    "social_optimum",
    "settle_two_stage",
]


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class GeneratorKind(str, enum.Enum):
    FAST = "fast"
    SLOW = "slow"


class Stage(str, enum.Enum):
    DAY_AHEAD = "DayAhead"
    REAL_TIME = "RealTime"
    SOCIAL_OPTIMUM = "SocialOptimum"


@dataclass(frozen=True)
class Generator:
    id: str
    kind: GeneratorKind
    alpha: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "kind", GeneratorKind(self.kind))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"generator {self.id!r}: alpha must be finite and > 0, got {self.alpha}")
        if not math.isfinite(self.beta):
            raise ValidationError(f"generator {self.id!r}: beta must be finite, got {self.beta}")

    @property
    def is_fast(self) -> bool:
        return self.kind is GeneratorKind.FAST

    def cost(self, x: float) -> float:
        return 0.5 * self.alpha * x * x + self.beta * x

    def marginal_cost(self, x: float) -> float:
        return self.alpha * x + self.beta


@dataclass(frozen=True)
class PricingCoefficients:
    """Aggregate slopes/intercept of the linear day-ahead and real-time price laws.

    ``price_da = alpha_da * d_da + beta_da`` and
    ``price_rt = alpha_rt * d_rt + price_da``.
    """

    alpha_da: float
    beta_da: float
    alpha_rt: float

    def __post_init__(self):
        if not (self.alpha_da > 0 and self.alpha_rt > 0):
            raise ValidationError("aggregate slopes must be positive")
        if self.alpha_rt < self.alpha_da * (1 - 1e-12):
            raise ValidationError("alpha_rt must not be below alpha_da")

    @property
    def ratio(self) -> float:
        """alpha_da / alpha_rt, in (0, 1]."""
        return self.alpha_da / self.alpha_rt

    def price_da(self, d_da: float) -> float:
        return self.alpha_da * d_da + self.beta_da

    def price_rt(self, d_da: float, d_rt: float) -> float:
        return self.alpha_rt * d_rt + self.price_da(d_da)


@dataclass(frozen=True)
class Fleet:
    generators: tuple[Generator, ...]

    def __post_init__(self):
        gens = tuple(self.generators)
        object.__setattr__(self, "generators", gens)
        if not gens:
            raise ValidationError("fleet has no generators")
        seen = set()
        for g in gens:
            if g.id in seen:
                raise ValidationError(f"duplicate generator id {g.id!r}")
            seen.add(g.id)
        if not any(g.is_fast for g in gens):
            raise ValidationError("real-time market unclearable: fleet has no fast generator")

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "Fleet":
        """Build a fleet from ``{id, kind, alpha, beta}`` mappings."""
        gens = []
        for i, rec in enumerate(records):
            try:
                gens.append(Generator(str(rec["id"]), GeneratorKind(str(rec["kind"]).lower()),
                                      float(rec["alpha"]), float(rec["beta"])))
            except KeyError as exc:
                raise ValidationError(f"generator #{i}: missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(f"generator #{i}: {exc}") from None
        return cls(tuple(gens))

    @classmethod
    def from_aggregates(cls, alpha_da: float, beta_da: float, alpha_rt: float) -> "Fleet":
        """Smallest fleet (one fast, at most one slow unit) with the given aggregates."""
        if alpha_rt < alpha_da:
            raise ValidationError("alpha_rt must be >= alpha_da")
        gens = [Generator("fast", GeneratorKind.FAST, alpha_rt, beta_da)]
        if alpha_rt > alpha_da:
            alpha_slow = 1.0 / (1.0 / alpha_da - 1.0 / alpha_rt)
            gens.append(Generator("slow", GeneratorKind.SLOW, alpha_slow, beta_da))
        return cls(tuple(gens))

    @property
    def fast(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.is_fast)

    @property
    def slow(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if not g.is_fast)

    @property
    def coefficients(self) -> PricingCoefficients:
        return PricingCoefficients(*aggregate_coefficients(self))

    @property
    def alpha_da(self) -> float:
        return self.coefficients.alpha_da

    @property
    def beta_da(self) -> float:
        return self.coefficients.beta_da

    @property
    def alpha_rt(self) -> float:
        return self.coefficients.alpha_rt

    def to_records(self) -> list[dict]:
        return [{"id": g.id, "kind": g.kind.value, "alpha": g.alpha, "beta": g.beta}
                for g in self.generators]


@dataclass(frozen=True)
class ClearingOutcome:
    stage: Stage
    dispatch: Mapping[str, float]
    price: float
    cleared_quantity: float
    total_cost: float
    interior: bool

    def __post_init__(self):
        object.__setattr__(self, "dispatch", MappingProxyType(dict(self.dispatch)))

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "dispatch": dict(self.dispatch),
            "price": self.price,
            "cleared_quantity": self.cleared_quantity,
            "total_cost": self.total_cost,
            "interior": self.interior,
        }


@dataclass(frozen=True)
class TwoStageOutcome:
    day_ahead: ClearingOutcome
    real_time: ClearingOutcome
    spread: float
    total_cost: float
    efficiency_gap: float
    social: ClearingOutcome = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "day_ahead": self.day_ahead.to_dict(),
            "real_time": self.real_time.to_dict(),
            "spread": self.spread,
            "total_cost": self.total_cost,
            "efficiency_gap": self.efficiency_gap,
        }


def aggregate_coefficients(fleet: Fleet) -> tuple[float, float, float]:
    """Harmonic aggregation of the fleet's cost curves.

    Returns ``(alpha_da, beta_da, alpha_rt)``: all units contribute to the
    day-ahead pair, only fast units to ``alpha_rt``.
    """
    fast = [g for g in fleet.generators if g.is_fast]
    if not fast:
        raise ValidationError("real-time market unclearable: fleet has no fast generator")
    inv_all = math.fsum(1.0 / g.alpha for g in fleet.generators)
    weighted_beta = math.fsum(g.beta / g.alpha for g in fleet.generators)
    inv_fast = math.fsum(1.0 / g.alpha for g in fast)
    return 1.0 / inv_all, weighted_beta / inv_all, 1.0 / inv_fast


def _active_set(alpha, beta, offsets, target):
    output_total = float(target) + math.fsum(offsets)
    if output_total < 0:
        raise ValidationError("infeasible: target would require negative total output")
    # rounding slack so that exactly-zero outputs are not clamped
    slack = 1e-12 * max(1.0, output_total)
    free = np.ones(alpha.size, dtype=bool)
    while True:
        inv = 1.0 / alpha[free]
        lam = (output_total + math.fsum(beta[free] * inv)) / math.fsum(inv)
        output = np.where(free, (lam - beta) / alpha, 0.0)
        violated = free & (output < -slack)
        if not violated.any():
            return output - offsets, float(lam), free
        free &= ~violated


def solve_bounded_eq_qp(
    costs: Sequence[tuple[float, float]],
    offsets: Sequence[float],
    target: float,
) -> tuple[np.ndarray, float]:
    """Minimise ``sum_i alpha_i/2 (o_i + z_i)^2 + beta_i (o_i + z_i)``.

    subject to ``sum_i z_i = target`` and ``o_i + z_i >= 0``.

    Active-set elimination: solve the equality-constrained problem on the free
    set, clamp every variable whose output ``o_i + z_i`` went negative, repeat.
    The multiplier decreases monotonically, so a clamped variable never needs
    to be released and the loop ends after at most ``n`` passes.

    Returns the adjustments ``z`` and the multiplier of the balance row.
    """
    alpha = np.array([c[0] for c in costs], dtype=float)
    beta = np.array([c[1] for c in costs], dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if alpha.size == 0:
        raise ValidationError("no variables")
    if offsets.shape != alpha.shape:
        raise ValidationError("offsets must match costs")
    if np.any(alpha <= 0):
        raise ValidationError("all alpha must be positive")
    z, lam, _ = _active_set(alpha, beta, offsets, target)
    return z, lam


def _check_demand(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite")
    return value


def _outcome(stage, gens, dispatch, price, cleared, cost, interior) -> ClearingOutcome:
    return ClearingOutcome(
        stage=stage,
        dispatch={g.id: float(x) for g, x in zip(gens, dispatch)},
        price=float(price),
        cleared_quantity=float(cleared),
        total_cost=float(cost),
        interior=bool(interior),
    )


def _clear_all(fleet: Fleet, demand: float, stage: Stage) -> ClearingOutcome:
    gens = fleet.generators
    a_da, b_da, _ = aggregate_coefficients(fleet)
    price = a_da * demand + b_da
    x = np.array([(price - g.beta) / g.alpha for g in gens])
    interior = bool(np.all(x >= 0))
    if not interior:
        x, price, _ = _active_set(np.array([g.alpha for g in gens]), np.array([g.beta for g in gens]),
                                  np.zeros(len(gens)), demand)
    cost = math.fsum(g.cost(xi) for g, xi in zip(gens, x))
    return _outcome(stage, gens, x, price, demand, cost, interior)


def clear_day_ahead(fleet: Fleet, d_da: float) -> ClearingOutcome:
    """Clear the day-ahead load over all generators."""
    d_da = _check_demand(d_da, "d_da")
    if d_da < 0:
        raise ValidationError("day-ahead demand must be nonnegative")
    return _clear_all(fleet, d_da, Stage.DAY_AHEAD)


def clear_real_time(fleet: Fleet, day_ahead: ClearingOutcome, d_rt: float) -> ClearingOutcome:
    """Clear the real-time deviation ``d_rt`` with fast units only.

    ``dispatch`` holds the adjustments ``delta_x`` (negative means sell-back);
    ``total_cost`` is the fast units' cost at their final output.
    """
    d_rt = _check_demand(d_rt, "d_rt")
    if day_ahead.stage is not Stage.DAY_AHEAD:
        raise ValidationError("clear_real_time needs a day-ahead outcome")
    fast = fleet.fast
    try:
        base = np.array([day_ahead.dispatch[g.id] for g in fast])
    except KeyError as exc:
        raise ValidationError(f"day-ahead outcome lacks generator {exc.args[0]!r}") from None

    interior = False
    if day_ahead.interior:
        alpha_rt = aggregate_coefficients(fleet)[2]
        price = alpha_rt * d_rt + day_ahead.price
        delta = np.array([alpha_rt * d_rt / g.alpha for g in fast])
        interior = bool(np.all(base + delta >= 0))
    if not interior:
        delta, price, free = _active_set(np.array([g.alpha for g in fast]), np.array([g.beta for g in fast]),
                                         base, d_rt)
        interior = bool(free.all())
    cost = math.fsum(g.cost(x0 + dx) for g, x0, dx in zip(fast, base, delta))
    return _outcome(Stage.REAL_TIME, fast, delta, price, d_rt, cost, interior)


def social_optimum(fleet: Fleet, d: float) -> ClearingOutcome:
    """Joint least-cost dispatch of the whole load over every generator."""
    d = _check_demand(d, "d")
    if d < 0:
        raise ValidationError("total demand must be nonnegative")
    return _clear_all(fleet, d, Stage.SOCIAL_OPTIMUM)


def settle_two_stage(fleet: Fleet, d_da: float, d_rt: float) -> TwoStageOutcome:
    """Run both stages and compare the realised cost against the social optimum.

    ``total_cost`` counts each unit once at its final output, so the
    day-ahead cost of fast units is included.
    """
    da = clear_day_ahead(fleet, d_da)
    rt = clear_real_time(fleet, da, d_rt)
    slow_cost = math.fsum(g.cost(da.dispatch[g.id]) for g in fleet.slow)
    total = rt.total_cost + slow_cost
    social = social_optimum(fleet, da.cleared_quantity + rt.cleared_quantity)
    return TwoStageOutcome(
        day_ahead=da,
        real_time=rt,
        spread=da.price - rt.price,
        total_cost=total,
        efficiency_gap=total - social.total_cost,
        social=social,
    )
