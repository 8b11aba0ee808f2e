"""Two-stage electricity market model: clearing, strategic loads, virtual bidding, price regressions."""

__version__ = "0.1.0"

from .market_core import (  # noqa: E402
    ClearingOutcome,
    Fleet,
    Generator,
    GeneratorKind,
    PricingCoefficients,
    Stage,
    TwoStageOutcome,
    ValidationError,
    aggregate_coefficients,
    clear_day_ahead,
    clear_real_time,
    settle_two_stage,
    social_optimum,
    solve_bounded_eq_qp,
)
from .strategic_play import (  # noqa: E402
    CournotSolution,
    LoadProfile,
    PlayerDecision,
    best_response,
    cournot_best_response_iterate,
    cournot_closed_form,
    expenditure,
    real_da_load_share,
    single_load_optimum,
    verify_no_boundary_equilibrium,
)
from .empirics import (  # noqa: E402
    MarketSeries,
    RegressionFit,
    event_study,
    fit_da_price,
    fit_rt_price,
    load_market_csv,
    synthesize_series,
)
