"""Case-study pipeline and command-line interface."""

from .casestudy import (
    ExperimentSeries,
    SavingsReport,
    billing_savings_report,
    derive_scenario_from_experiment,
    horizon_scenario,
    load_case_data,
    run_case_study,
)

__all__ = [
    "ExperimentSeries",
    "SavingsReport",
    "billing_savings_report",
    "derive_scenario_from_experiment",
    "horizon_scenario",
    "load_case_data",
    "run_case_study",
]
