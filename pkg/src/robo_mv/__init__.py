"""Adaptive multi-period mean-variance allocation under regime switching.

The package is organised around five pillars:

- :mod:`robo_mv.market` -- regime-switching market model and validation,
- :mod:`robo_mv.risk_profile` -- client and robo risk-aversion dynamics,
- :mod:`robo_mv.solver` -- backward-induction equilibrium policies,
- :mod:`robo_mv.personalization` -- personalization/tracking diagnostics,
- :mod:`robo_mv.cycle_analytics` -- long-run Sharpe-ratio analytics,
- :mod:`robo_mv.montecarlo` -- forward simulation and wealth statistics.

``robo_mv.cli`` exposes everything as a command-line tool (``robo-mv``).
"""

from robo_mv.cycle_analytics import (
    CycleStrategy,
    SharpeInputs,
    annualize_sharpe,
    concavity_at_zero,
    implied_gamma,
    inputs_from_market,
    monotone_in_delta,
    sensitivity_predicates,
    sharpe_delta,
    sharpe_general,
)
from robo_mv.errors import (
    BadDimension,
    ConfigError,
    DegenerateDenominator,
    DegenerateVariance,
    GridExhausted,
    InsufficientSamples,
    NegativeVol,
    NonErgodic,
    NonStochasticRow,
    NotInteractionTime,
    NumericalError,
    RoboMVError,
    RootBracketFailure,
    WindowLengthMismatch,
    ZeroAllocation,
)
from robo_mv.market import (
    MarketParams,
    check,
    excess_moments,
    load_market,
    market_from_dict,
    sample_paths,
    sample_step,
    stationary_distribution,
    validate,
)
from robo_mv.montecarlo import (
    SimConfig,
    StatsSummary,
    annualized,
    long_run_sharpe,
    simulate,
    stats,
)
from robo_mv.personalization import (
    PersonalizationInputs,
    PhiStar,
    SMeasure,
    interact_every_step_suboptimal,
    phi_star,
    r_measure,
    r_tilde,
    r_tilde_dphi,
    r_tilde_sandwich,
    s_measure,
)
from robo_mv.risk_profile import (
    ClientTrajectory,
    RiskProfileParams,
    bias_factor,
    client_gamma,
    communicated_xi,
    load_profile,
    profile_from_dict,
    robo_gamma,
    sample_eps,
    simulate_clients,
    simulate_trajectory,
)
from robo_mv.solver import (
    Grid,
    GridSpec,
    PolicyTables,
    ReducedState,
    allocation,
    allocation_independent,
    brute_force_equilibrium,
    constrain,
    liquidation_overlay,
    load_policy,
    moment_m,
    save_policy,
    solve,
    state_only_ab,
    step_moments,
    update_ab,
)

__version__ = "0.1.0"

__all__ = [
    "BadDimension",
    "ClientTrajectory",
    "ConfigError",
    "CycleStrategy",
    "DegenerateDenominator",
    "DegenerateVariance",
    "Grid",
    "GridExhausted",
    "GridSpec",
    "InsufficientSamples",
    "MarketParams",
    "NegativeVol",
    "NonErgodic",
    "NonStochasticRow",
    "NotInteractionTime",
    "NumericalError",
    "PersonalizationInputs",
    "PhiStar",
    "PolicyTables",
    "ReducedState",
    "RiskProfileParams",
    "RoboMVError",
    "RootBracketFailure",
    "SMeasure",
    "SharpeInputs",
    "SimConfig",
    "StatsSummary",
    "WindowLengthMismatch",
    "ZeroAllocation",
    "allocation",
    "allocation_independent",
    "annualize_sharpe",
    "annualized",
    "bias_factor",
    "brute_force_equilibrium",
    "check",
    "client_gamma",
    "communicated_xi",
    "concavity_at_zero",
    "constrain",
    "excess_moments",
    "implied_gamma",
    "inputs_from_market",
    "interact_every_step_suboptimal",
    "liquidation_overlay",
    "load_market",
    "load_policy",
    "load_profile",
    "long_run_sharpe",
    "market_from_dict",
    "moment_m",
    "monotone_in_delta",
    "phi_star",
    "profile_from_dict",
    "r_measure",
    "r_tilde",
    "r_tilde_dphi",
    "r_tilde_sandwich",
    "robo_gamma",
    "s_measure",
    "sample_eps",
    "sample_paths",
    "sample_step",
    "save_policy",
    "sensitivity_predicates",
    "sharpe_delta",
    "sharpe_general",
    "simulate",
    "simulate_clients",
    "simulate_trajectory",
    "solve",
    "state_only_ab",
    "stationary_distribution",
    "stats",
    "step_moments",
    "update_ab",
    "validate",
    "__version__",
]
