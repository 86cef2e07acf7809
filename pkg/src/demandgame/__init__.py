"""Stackelberg demand-response game: equilibria, allocation, distributed pricing."""

from __future__ import annotations

from .allocation import (
    AllocationProfile,
    allocation_nash_equilibrium,
    best_response_oracle,
    revenue_given_allocation,
    revenues_given_allocation,
)
from .asymptotics import (
    RegimeSweepResult,
    SymmetricMarket,
    min_company_ratio,
    sweep_periods,
    sweep_population,
)
from .distributed import IterationTrace, privacy_audit, run_algorithm1
from .equilibrium import (
    EquilibriumOutcome,
    consumer_best_response,
    consumer_utility,
    equilibrium_prices_closed_form,
    equilibrium_prices_linear_solve,
    minimum_budget,
    stackelberg_equilibrium,
)
from .model import Company, Consumer, Scenario, load_scenario, validate_scenario

__version__ = "0.1.0"

__all__ = [
    "AllocationProfile",
    "Company",
    "Consumer",
    "EquilibriumOutcome",
    "IterationTrace",
    "RegimeSweepResult",
    "Scenario",
    "SymmetricMarket",
    "allocation_nash_equilibrium",
    "best_response_oracle",
    "consumer_best_response",
    "consumer_utility",
    "equilibrium_prices_closed_form",
    "equilibrium_prices_linear_solve",
    "load_scenario",
    "min_company_ratio",
    "minimum_budget",
    "privacy_audit",
    "revenue_given_allocation",
    "revenues_given_allocation",
    "run_algorithm1",
    "stackelberg_equilibrium",
    "sweep_periods",
    "sweep_population",
    "validate_scenario",
]
