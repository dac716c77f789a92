"""Stochastic temporal bin packing for cost-efficient cloud portfolios."""

from .datagen import build_case, build_named_case, generate_tiny_case
from .erich import ErichConfig, solve_erich
from .georg import GaConfig, solve_georg
from .model import (
    AllocatedInstance,
    Application,
    DemandDistribution,
    InstanceType,
    Market,
    Portfolio,
    ProblemError,
    ProblemInstance,
    UnsolvableError,
    chance_feasible,
    portfolio_cost,
    validate,
)
from .oracle import brute_force_optimum, monte_carlo_feasibility

__all__ = [
    "AllocatedInstance",
    "Application",
    "DemandDistribution",
    "ErichConfig",
    "GaConfig",
    "InstanceType",
    "Market",
    "Portfolio",
    "ProblemError",
    "ProblemInstance",
    "UnsolvableError",
    "brute_force_optimum",
    "build_case",
    "build_named_case",
    "chance_feasible",
    "generate_tiny_case",
    "monte_carlo_feasibility",
    "portfolio_cost",
    "solve_erich",
    "solve_georg",
    "validate",
]
