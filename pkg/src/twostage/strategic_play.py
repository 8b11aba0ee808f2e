"""Strategic load participation in the two-stage market.

Loads with inelastic demand choose how much to buy day-ahead and how much to
leave for the real-time market.  Prices follow the fleet's linear laws::

    price_da = alpha_da * D + beta_da
    price_rt = alpha_rt * R + price_da

with ``D``/``R`` the summed day-ahead/real-time positions of every player.
Virtual bidders hold a decrement bid: buy ``da >= 0`` day-ahead and sell the
same amount back in real time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .market_core import Fleet, PricingCoefficients, ValidationError

__all__ = [
    "LoadProfile",
    "PlayerDecision",
    "SolutionMethod",
    "CournotSolution",
    "BoundaryCheckReport",
    "single_load_optimum",
    "expenditure",
    "best_response",
    "cournot_closed_form",
    "cournot_best_response_iterate",
    "verify_no_boundary_equilibrium",
    "real_da_load_share",
]

Market = Union[Fleet, PricingCoefficients]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


def _coefficients(market: Market) -> PricingCoefficients:
    if isinstance(market, PricingCoefficients):
        return market
    return market.coefficients


@dataclass(frozen=True)
class LoadProfile:
    demands: tuple[float, ...]

    def __post_init__(self):
        demands = tuple(float(d) for d in self.demands)
        object.__setattr__(self, "demands", demands)
        if not demands:
            raise ValidationError("at least one load is required")
        for i, d in enumerate(demands):
            if not (math.isfinite(d) and d > 0):
                raise ValidationError(f"load {i}: demand must be finite and > 0, got {d}")

    @property
    def L(self) -> int:
        return len(self.demands)

    @property
    def total(self) -> float:
        return math.fsum(self.demands)

    @classmethod
    def even(cls, total: float, count: int) -> "LoadProfile":
        return cls((total / count,) * count)


@dataclass(frozen=True)
class PlayerDecision:
    da: float
    rt: float
    is_virtual: bool = False

    @property
    def demand(self) -> float:
        return self.da + self.rt

    def to_dict(self) -> dict:
        return {"da": self.da, "rt": self.rt, "is_virtual": self.is_virtual}


class SolutionMethod(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    BEST_RESPONSE = "BestResponse"


@dataclass(frozen=True)
class CournotSolution:
    decisions: tuple[PlayerDecision, ...]
    total_da: float
    total_rt: float
    price_da: float
    price_rt: float
    spread: float
    expenditures: tuple[float, ...]
    method: SolutionMethod
    iterations: int = 0
    converged: bool = True

    @property
    def real(self) -> tuple[PlayerDecision, ...]:
        return tuple(p for p in self.decisions if not p.is_virtual)

    @property
    def virtual(self) -> tuple[PlayerDecision, ...]:
        return tuple(p for p in self.decisions if p.is_virtual)

    @property
    def real_da_total(self) -> float:
        return math.fsum(p.da for p in self.real)

    def to_dict(self) -> dict:
        return {
            "decisions": [p.to_dict() for p in self.decisions],
            "total_da": self.total_da,
            "total_rt": self.total_rt,
            "price_da": self.price_da,
            "price_rt": self.price_rt,
            "spread": self.spread,
            "expenditures": list(self.expenditures),
            "method": self.method.value,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def single_load_optimum(market: Market, d: float) -> PlayerDecision:
    """Expenditure-minimising split of a lone load's demand ``d``."""
    d = float(d)
    if not (math.isfinite(d) and d > 0):
        raise ValidationError("demand must be positive")
    c = _coefficients(market)
    rt = 0.5 * c.ratio * d
    return PlayerDecision(d - rt, rt)


def _prices(c: PricingCoefficients, decisions: Sequence[PlayerDecision]):
    total_da = math.fsum(p.da for p in decisions)
    total_rt = math.fsum(p.rt for p in decisions)
    price_da = c.price_da(total_da)
    return total_da, total_rt, price_da, c.alpha_rt * total_rt + price_da


def expenditure(market: Market, decisions: Sequence[PlayerDecision], player: int) -> float:
    """What ``player`` pays across both markets given everyone's positions."""
    c = _coefficients(market)
    _, _, price_da, price_rt = _prices(c, decisions)
    p = decisions[player]
    return price_da * p.da + price_rt * p.rt


def best_response(
    market: Market,
    loads: LoadProfile,
    others: Sequence[PlayerDecision],
    player: int,
    clamp: bool = True,
) -> PlayerDecision:
    """Best reply of ``player`` to the other participants' positions.

    ``others`` is the full profile with ``player`` removed.  Indices
    ``0..L-1`` are real loads; ``L`` and above are virtual bidders, whose
    reply is a decrement bid with zero net demand.  With ``clamp=False`` the
    unconstrained first-order solution is returned even if its day-ahead part
    is negative.
    """
    c = _coefficients(market)
    rest_rt = math.fsum(p.rt for p in others)
    if player >= loads.L:
        da = 0.5 * rest_rt
        if clamp:
            da = max(da, 0.0)
        return PlayerDecision(da, -da, is_virtual=True)
    d = loads.demands[player]
    da = (1.0 - 0.5 * c.ratio) * d + 0.5 * rest_rt
    if clamp:
        da = max(da, 0.0)
    return PlayerDecision(da, d - da)


def _solution(c, decisions, method, iterations=0, converged=True) -> CournotSolution:
    decisions = tuple(decisions)
    total_da, total_rt, price_da, price_rt = _prices(c, decisions)
    spend = tuple(price_da * p.da + price_rt * p.rt for p in decisions)
    return CournotSolution(
        decisions=decisions,
        total_da=total_da,
        total_rt=total_rt,
        price_da=price_da,
        price_rt=price_rt,
        spread=price_da - price_rt,
        expenditures=spend,
        method=method,
        iterations=iterations,
        converged=converged,
    )


def cournot_closed_form(market: Market, loads: LoadProfile, virtual_count: int = 0) -> CournotSolution:
    """Unique Nash equilibrium of the load-side game.

    Without virtual bidders the per-load formula is used directly.  With
    ``V > 0`` the joint first-order system ``(I + 11^T) rt = r * d`` (``r =
    alpha_da / alpha_rt``, ``d_v = 0`` for virtual players) is solved.
    """
    if virtual_count < 0:
        raise ValidationError("virtual_count must be >= 0")
    c = _coefficients(market)
    r = c.ratio
    demands = np.array(loads.demands)
    L, V = loads.L, int(virtual_count)
    total = loads.total
    if V == 0:
        decisions = []
        for d_l in demands:
            others = total - d_l
            rt = L * r / (L + 1) * d_l - r / (L + 1) * others
            da = (1.0 - L * r / (L + 1)) * d_l + r / (L + 1) * others
            decisions.append(PlayerDecision(float(da), float(rt)))
        return _solution(c, decisions, SolutionMethod.CLOSED_FORM)

    n = L + V
    rhs = np.concatenate([r * demands, np.zeros(V)])
    rt = np.linalg.solve(np.eye(n) + np.ones((n, n)), rhs)
    decisions = [PlayerDecision(float(d_l - x), float(x)) for d_l, x in zip(demands, rt[:L])]
    decisions += [PlayerDecision(float(-x), float(x), is_virtual=True) for x in rt[L:]]
    return _solution(c, decisions, SolutionMethod.CLOSED_FORM)


def cournot_best_response_iterate(
    market: Market,
    loads: LoadProfile,
    virtual_count: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    start: Sequence[float] | None = None,
) -> CournotSolution:
    """Gauss-Seidel best-response dynamics, real loads first then virtual bidders.

    ``start`` gives the initial day-ahead position of every player (defaults
    to buying all demand day-ahead and zero virtual bids).  After each sweep
    every player's best reply to the current profile is evaluated; the loop
    stops once none of them would move its day-ahead position by more than
    ``tol``.  Otherwise the last iterate is returned with ``converged=False``
    after ``max_iter`` sweeps.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    c = _coefficients(market)
    L, V = loads.L, int(virtual_count)
    n = L + V
    demands = list(loads.demands) + [0.0] * V
    if start is None:
        da = demands[:L] + [0.0] * V
    else:
        da = [float(x) for x in start]
        if len(da) != n:
            raise ValidationError(f"start must have {n} entries")
    rt = [d - x for d, x in zip(demands, da)]
    half_keep = 1.0 - 0.5 * c.ratio
    total_rt = math.fsum(rt)

    def reply(i, rest_rt):
        base = half_keep * demands[i] if i < L else 0.0
        return max(base + 0.5 * rest_rt, 0.0)

    converged = False
    sweeps = 0
    while sweeps < max_iter:
        sweeps += 1
        for i in range(n):
            rest_rt = total_rt - rt[i]
            da[i] = reply(i, rest_rt)
            rt[i] = demands[i] - da[i]
            total_rt = rest_rt + rt[i]
        total_rt = math.fsum(rt)
        # largest move any single player would still make against the current profile
        residual = max(abs(reply(i, total_rt - rt[i]) - da[i]) for i in range(n))
        if residual <= tol:
            converged = True
            break

    decisions = [PlayerDecision(da[i], rt[i], is_virtual=i >= L) for i in range(n)]
    return _solution(c, decisions, SolutionMethod.BEST_RESPONSE, sweeps, converged)


@dataclass(frozen=True)
class BoundaryCheckReport:
    candidates: int
    violations: int
    min_best_response: float
    details: tuple = field(default=(), repr=False)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _restricted_equilibrium(r: float, demands: np.ndarray, pinned: np.ndarray) -> np.ndarray:
    """Real-time positions when ``pinned`` loads buy nothing day-ahead and the rest best-respond."""
    rt = demands.copy()
    free = np.flatnonzero(~pinned)
    if free.size:
        k = free.size
        pinned_rt = demands[pinned].sum()
        rhs = r * demands[free] - pinned_rt
        rt[free] = np.linalg.solve(np.eye(k) + np.ones((k, k)), rhs)
    return rt


def verify_no_boundary_equilibrium(
    market: Market,
    loads: LoadProfile,
    trials: int,
    seed: int | np.random.Generator | None = None,
) -> BoundaryCheckReport:
    """Search for equilibria with some load buying nothing day-ahead.

    Each trial pins a random non-empty subset of loads at ``da = 0``, lets the
    remaining loads settle into their mutual best responses, and evaluates the
    pinned loads' unconstrained best responses.  A pinned load whose best
    response is not strictly positive would be a boundary equilibrium and is
    counted as a violation.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    c = _coefficients(market)
    r = c.ratio
    demands = np.array(loads.demands)
    L = loads.L
    violations = 0
    worst = math.inf
    details = []
    for trial in range(trials):
        if trial == 0:
            pinned = np.ones(L, dtype=bool)
        else:
            pinned = rng.random(L) < rng.uniform(0.2, 1.0)
            if not pinned.any():
                pinned[rng.integers(L)] = True
        rt = _restricted_equilibrium(r, demands, pinned)
        total_rt = rt.sum()
        for l in np.flatnonzero(pinned):
            reply = (1.0 - 0.5 * r) * demands[l] + 0.5 * (total_rt - rt[l])
            worst = min(worst, reply)
            if not reply > 0:
                violations += 1
                details.append((trial, int(l), float(reply)))
    return BoundaryCheckReport(trials, violations, float(worst), tuple(details))


def real_da_load_share(alpha_da: float, alpha_rt: float, L: int, V: int) -> float:
    """Fraction of real demand bought day-ahead at equilibrium with ``V`` virtual bidders."""
    if L < 1 or V < 0:
        raise ValidationError("need L >= 1 and V >= 0")
    if not (alpha_rt >= alpha_da > 0):
        raise ValidationError("need alpha_rt >= alpha_da > 0")
    return 1.0 - (V + 1) * alpha_da / ((L + V + 1) * alpha_rt)
