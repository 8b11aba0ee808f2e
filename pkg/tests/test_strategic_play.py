import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twostage.market_core import Fleet, Generator, GeneratorKind, PricingCoefficients, ValidationError, settle_two_stage
from twostage.strategic_play import (
    LoadProfile,
    PlayerDecision,
    SolutionMethod,
    best_response,
    cournot_best_response_iterate,
    cournot_closed_form,
    expenditure,
    real_da_load_share,
    single_load_optimum,
    verify_no_boundary_equilibrium,
)

from oracles import grid_expenditure_minimum, numeric_best_response

F, S = GeneratorKind.FAST, GeneratorKind.SLOW


@pytest.fixture
def fleet():
    # aggregates (alpha_da, beta_da, alpha_rt) = (0.5, 7.5, 1.0)
    return Fleet((Generator("f1", F, 2, 10), Generator("f2", F, 2, 10), Generator("s1", S, 1, 5)))


def random_coefficients(rng):
    alpha_rt = rng.uniform(0.2, 10.0)
    return PricingCoefficients(alpha_rt * rng.uniform(0.05, 0.99), rng.uniform(-10, 50), alpha_rt)


def others(decisions, i):
    return [p for k, p in enumerate(decisions) if k != i]


# -- single load -----------------------------------------------------------

def test_single_load_example(fleet):
    p = single_load_optimum(fleet, 10.0)
    assert (p.da, p.rt) == pytest.approx((7.5, 2.5))
    da_grid, _ = grid_expenditure_minimum(0.5, 7.5, 1.0, 10.0)
    assert abs(p.da - da_grid) <= 1e-4


def test_single_load_all_fast():
    fl = Fleet((Generator("a", F, 1, 3), Generator("b", F, 4, 1)))
    p = single_load_optimum(fl, 10.0)
    assert (p.da, p.rt) == pytest.approx((5.0, 5.0))


@pytest.mark.parametrize("seed", range(25))
def test_single_load_bounds(seed):
    rng = np.random.default_rng(seed)
    c = random_coefficients(rng)
    d = rng.uniform(0.1, 100)
    p = single_load_optimum(c, d)
    assert d / 2 < p.da < d
    assert 0 < p.rt < d / 2
    sol = cournot_closed_form(c, LoadProfile((d,)))
    assert sol.spread < 0


def test_single_load_rejects_nonpositive(fleet):
    with pytest.raises(ValidationError):
        single_load_optimum(fleet, 0.0)


# -- expenditure -----------------------------------------------------------

def test_expenditure_example(fleet):
    p = single_load_optimum(fleet, 10.0)
    assert expenditure(fleet, [p], 0) == pytest.approx(118.75, rel=1e-14)
    two = settle_two_stage(fleet, p.da, p.rt)
    assert two.day_ahead.price == pytest.approx(11.25)
    assert two.real_time.price == pytest.approx(13.75)
    assert expenditure(fleet, [p], 0) == pytest.approx(two.day_ahead.price * p.da + two.real_time.price * p.rt)


def test_expenditure_all_day_ahead(fleet):
    decisions = [PlayerDecision(3.0, 0.0), PlayerDecision(7.0, 0.0)]
    price_da = 0.5 * 10 + 7.5
    assert expenditure(fleet, decisions, 0) == pytest.approx(price_da * 3.0)
    assert expenditure(fleet, decisions, 1) == pytest.approx(price_da * 7.0)


@pytest.mark.parametrize("eps", [1e-3, -1e-3, 0.5, -0.5])
def test_expenditure_perturbation_raises_cost(fleet, eps):
    p = single_load_optimum(fleet, 10.0)
    base = expenditure(fleet, [p], 0)
    moved = PlayerDecision(p.da + eps, p.rt - eps)
    assert expenditure(fleet, [moved], 0) > base


# -- best response ---------------------------------------------------------

def test_best_response_without_real_time_competition(fleet):
    loads = LoadProfile((4.0, 6.0))
    other = [PlayerDecision(6.0, 0.0)]
    assert best_response(fleet, loads, other, 0) == single_load_optimum(fleet, 4.0)


def test_best_response_fixed_point(fleet):
    loads = LoadProfile((5.0, 5.0))
    eq = PlayerDecision(25 / 6, 5 / 6)
    reply = best_response(fleet, loads, [eq], 0)
    assert (reply.da, reply.rt) == pytest.approx((25 / 6, 5 / 6), rel=1e-15)


def test_best_response_hedges_against_real_time_buying(fleet):
    loads = LoadProfile((5.0, 5.0))
    low = best_response(fleet, loads, [PlayerDecision(4.0, 1.0)], 0)
    high = best_response(fleet, loads, [PlayerDecision(1.0, 4.0)], 0)
    assert high.da > low.da


def test_best_response_clamps(fleet):
    loads = LoadProfile((1.0, 1.0))
    far = [PlayerDecision(50.0, -49.0)]
    assert best_response(fleet, loads, far, 0).da == 0.0
    assert best_response(fleet, loads, far, 0, clamp=False).da < 0


@pytest.mark.parametrize("seed", range(30))
def test_best_response_matches_numeric_minimiser(seed):
    rng = np.random.default_rng(seed)
    c = random_coefficients(rng)
    L, V = int(rng.integers(1, 5)), int(rng.integers(0, 3))
    loads = LoadProfile(tuple(rng.uniform(1, 20, L)))
    demands = list(loads.demands) + [0.0] * V
    da = [rng.uniform(0.5, 1.0) * d for d in loads.demands] + list(rng.uniform(0, 3, V))
    decisions = [PlayerDecision(x, d - x, k >= L) for k, (x, d) in enumerate(zip(da, demands))]
    for i in range(L + V):
        reply = best_response(c, loads, others(decisions, i), i)
        ref = numeric_best_response(c.alpha_da, c.beta_da, c.alpha_rt, demands, da, i)
        assert reply.da == pytest.approx(ref, abs=1e-6)


# -- closed form -----------------------------------------------------------

def test_closed_form_two_loads(fleet):
    sol = cournot_closed_form(fleet, LoadProfile((5.0, 5.0)))
    for p in sol.decisions:
        assert (p.da, p.rt) == pytest.approx((25 / 6, 5 / 6), rel=1e-14)
    assert (sol.total_da, sol.total_rt) == pytest.approx((25 / 3, 5 / 3), rel=1e-14)
    assert sol.spread == pytest.approx(-5 / 3, rel=1e-13)
    assert sol.method is SolutionMethod.CLOSED_FORM and sol.iterations == 0
    oracle = cournot_best_response_iterate(fleet, LoadProfile((5.0, 5.0)), tol=1e-12)
    for a, b in zip(sol.decisions, oracle.decisions):
        assert a.da == pytest.approx(b.da, abs=1e-10)


def test_closed_form_single_load_matches_lone_optimum(fleet):
    sol = cournot_closed_form(fleet, LoadProfile((10.0,)))
    single = single_load_optimum(fleet, 10.0)
    assert sol.decisions[0].da == pytest.approx(single.da, rel=1e-15)
    assert sol.decisions[0].rt == pytest.approx(single.rt, rel=1e-15)


def test_closed_form_with_virtual_bidder(fleet):
    sol = cournot_closed_form(fleet, LoadProfile((5.0, 5.0)), virtual_count=1)
    v = sol.virtual[0]
    assert (v.da, v.rt) == pytest.approx((1.25, -1.25), rel=1e-13)
    assert sol.real_da_total == pytest.approx(7.5, rel=1e-13)
    assert sol.total_da == pytest.approx(8.75, rel=1e-13)
    oracle = cournot_best_response_iterate(fleet, LoadProfile((5.0, 5.0)), 1, tol=1e-12)
    assert oracle.converged
    for a, b in zip(sol.decisions, oracle.decisions):
        assert a.da == pytest.approx(b.da, abs=1e-10)


@pytest.mark.parametrize("seed", range(40))
def test_closed_form_identities(seed):
    rng = np.random.default_rng(seed)
    c = random_coefficients(rng)
    L, V = int(rng.integers(1, 9)), int(rng.integers(0, 6))
    loads = LoadProfile(tuple(rng.uniform(1, 50, L)))
    sol = cournot_closed_form(c, loads, V)
    d = loads.total
    n = L + V
    assert sol.total_rt * (n + 1) * c.alpha_rt == pytest.approx(c.alpha_da * d, rel=1e-9)
    assert sol.spread == pytest.approx(-c.alpha_rt * sol.total_rt, rel=1e-9)
    assert sol.total_da + sol.total_rt == pytest.approx(d, rel=1e-12)
    assert n / (n + 1) * d < sol.total_da < d
    assert all(p.da > 0 for p in sol.decisions)
    for v in sol.virtual:
        assert v.da == pytest.approx(c.ratio / (n + 1) * d, rel=1e-9)
        assert v.rt == -v.da
    assert sol.real_da_total / d == pytest.approx(real_da_load_share(c.alpha_da, c.alpha_rt, L, V), rel=1e-12)
    # every player is at a best reply
    for i in range(n):
        reply = best_response(c, loads, others(sol.decisions, i), i)
        assert reply.da == pytest.approx(sol.decisions[i].da, abs=1e-8 * max(1.0, d))


def test_closed_form_prices_consistent(fleet):
    sol = cournot_closed_form(fleet, LoadProfile((3.0, 4.0, 5.0)), virtual_count=2)
    c = fleet.coefficients
    assert sol.price_da == pytest.approx(c.alpha_da * sol.total_da + c.beta_da)
    assert sol.price_rt == pytest.approx(c.alpha_rt * sol.total_rt + sol.price_da)
    for i, spend in enumerate(sol.expenditures):
        assert spend == pytest.approx(expenditure(fleet, sol.decisions, i))


def test_closed_form_rejects_negative_virtual(fleet):
    with pytest.raises(ValidationError):
        cournot_closed_form(fleet, LoadProfile((1.0,)), -1)


# -- best-response iteration -----------------------------------------------

@pytest.mark.parametrize("start", ["da", "rt"])
def test_iteration_from_extreme_starts(fleet, start):
    loads = LoadProfile((5.0, 5.0))
    init = [5.0, 5.0] if start == "da" else [0.0, 0.0]
    sol = cournot_best_response_iterate(fleet, loads, start=init)
    assert sol.converged and sol.method is SolutionMethod.BEST_RESPONSE
    for p in sol.decisions:
        assert p.da == pytest.approx(25 / 6, abs=1e-8)


def test_iteration_single_load_one_sweep(fleet):
    sol = cournot_best_response_iterate(fleet, LoadProfile((10.0,)))
    assert sol.converged and sol.iterations == 1
    assert sol.decisions[0].da == pytest.approx(7.5, rel=1e-15)


def test_iteration_reports_nonconvergence(fleet):
    sol = cournot_best_response_iterate(fleet, LoadProfile.even(10.0, 6), 5, tol=1e-14, max_iter=2)
    assert not sol.converged and sol.iterations == 2


def test_iteration_first_order_residual(fleet):
    tol = 1e-9
    loads = LoadProfile((2.0, 9.0, 4.0, 7.0))
    sol = cournot_best_response_iterate(fleet, loads, 3, tol=tol)
    for i in range(len(sol.decisions)):
        reply = best_response(fleet, loads, others(sol.decisions, i), i)
        assert abs(reply.da - sol.decisions[i].da) <= 10 * tol


def test_iteration_validates_arguments(fleet):
    loads = LoadProfile((1.0,))
    with pytest.raises(ValidationError):
        cournot_best_response_iterate(fleet, loads, tol=0)
    with pytest.raises(ValidationError):
        cournot_best_response_iterate(fleet, loads, max_iter=0)
    with pytest.raises(ValidationError):
        cournot_best_response_iterate(fleet, loads, start=[1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_uniqueness_from_random_starts(seed):
    rng = np.random.default_rng(seed)
    c = random_coefficients(rng)
    L, V = int(rng.integers(1, 7)), int(rng.integers(0, 4))
    loads = LoadProfile(tuple(rng.uniform(0.5, 30, L)))
    ref = cournot_closed_form(c, loads, V)
    for _ in range(5):
        start = list(rng.uniform(0, 1, L) * np.array(loads.demands)) + list(rng.uniform(0, loads.total, V))
        sol = cournot_best_response_iterate(c, loads, V, start=start)
        assert sol.converged
        for a, b in zip(sol.decisions, ref.decisions):
            assert a.da == pytest.approx(b.da, abs=1e-7)


# -- boundary equilibria ---------------------------------------------------

def test_boundary_symmetric_pair(fleet):
    loads = LoadProfile((5.0, 5.0))
    # player 0 pinned at zero, player 1 at its best response to that
    p1 = best_response(fleet, loads, [PlayerDecision(0.0, 5.0)], 1)
    reply = best_response(fleet, loads, [p1], 0, clamp=False)
    assert reply.da > 0
    report = verify_no_boundary_equilibrium(fleet, loads, trials=10, seed=0)
    assert report.ok and report.candidates == 10


def test_boundary_all_pinned(fleet):
    loads = LoadProfile((1.0, 2.0, 3.0))
    pinned = [PlayerDecision(0.0, d) for d in loads.demands]
    for i, d in enumerate(loads.demands):
        reply = best_response(fleet, loads, others(pinned, i), i, clamp=False)
        expected = single_load_optimum(fleet, d).da + 0.5 * (loads.total - d)
        assert reply.da == pytest.approx(expected)
        assert reply.da > 0


@pytest.mark.parametrize("seed", range(10))
def test_boundary_random(seed):
    rng = np.random.default_rng(seed)
    c = random_coefficients(rng)
    loads = LoadProfile(tuple(rng.uniform(0.1, 100, int(rng.integers(1, 10)))))
    report = verify_no_boundary_equilibrium(c, loads, trials=50, seed=seed)
    assert report.violations == 0 and report.min_best_response > 0


# -- real-load day-ahead share ---------------------------------------------

def test_share_values():
    assert real_da_load_share(0.5, 1.0, 2, 0) == pytest.approx(1 - 0.5 / 3)
    assert real_da_load_share(0.5, 1.0, 2, 1) == pytest.approx(0.75)
    assert real_da_load_share(0.5, 1.0, 2, 10**9) == pytest.approx(0.5, abs=1e-8)


def test_share_matches_equilibrium(fleet):
    sol = cournot_closed_form(fleet, LoadProfile((5.0, 5.0)), 1)
    assert sol.real_da_total / 10.0 == pytest.approx(real_da_load_share(0.5, 1.0, 2, 1), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(ratio=st.floats(0.01, 1.0), L=st.integers(1, 50), V=st.integers(0, 50))
def test_share_decreasing_and_positive(ratio, L, V):
    a = real_da_load_share(ratio, 1.0, L, V)
    b = real_da_load_share(ratio, 1.0, L, V + 1)
    assert b < a
    assert b > 1.0 - ratio - 1e-15


def test_share_validates():
    with pytest.raises(ValidationError):
        real_da_load_share(1.0, 0.5, 1, 0)
    with pytest.raises(ValidationError):
        real_da_load_share(0.5, 1.0, 0, 0)


# -- efficiency properties -------------------------------------------------

def test_single_load_profits_at_efficiency_cost(fleet):
    d = 10.0
    strategic = single_load_optimum(fleet, d)
    efficient = PlayerDecision(d, 0.0)
    assert expenditure(fleet, [strategic], 0) < expenditure(fleet, [efficient], 0)
    assert settle_two_stage(fleet, strategic.da, strategic.rt).efficiency_gap > 0


def test_competition_restores_efficiency(fleet):
    rts = [cournot_closed_form(fleet, LoadProfile.even(12.0, L)).total_rt for L in range(1, 12)]
    assert all(b < a for a, b in zip(rts, rts[1:]))
    rts = [cournot_closed_form(fleet, LoadProfile.even(12.0, 3), V).total_rt for V in range(0, 12)]
    assert all(b < a for a, b in zip(rts, rts[1:]))
