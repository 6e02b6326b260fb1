"""Excess-loss lower bounds for overfitted linear models on random features."""

from __future__ import annotations

from .empirical_solver import ProblemInstance, SolveResult, brute_force_oracle, solve_min_excess
from .errors import (
    AssumptionError,
    ConfigError,
    DivergenceError,
    DomainError,
    IllConditioned,
    InfeasibleTau,
)
from .mp_analytics import (
    MpModel,
    analytic_excess_loss,
    peak_excess_loss,
    small_tau_bound,
    solve_fixed_point,
    stieltjes_m,
    stieltjes_m_prime,
    universal_bound,
)
from .simulation import ExcessLossReport, ExperimentConfig, figure_curves, run_experiment, sample_instance

__version__ = "0.1.0"

__all__ = [
    "AssumptionError",
    "ConfigError",
    "DivergenceError",
    "DomainError",
    "ExcessLossReport",
    "ExperimentConfig",
    "IllConditioned",
    "InfeasibleTau",
    "MpModel",
    "ProblemInstance",
    "SolveResult",
    "analytic_excess_loss",
    "brute_force_oracle",
    "figure_curves",
    "peak_excess_loss",
    "run_experiment",
    "sample_instance",
    "small_tau_bound",
    "solve_fixed_point",
    "solve_min_excess",
    "stieltjes_m",
    "stieltjes_m_prime",
    "universal_bound",
]
