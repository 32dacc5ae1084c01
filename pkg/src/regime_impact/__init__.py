"""Optimal investment when the investor's position moves a hidden market regime."""
from .filtering import bayes_update, filter_drift, propagate
from .full_info import ValueTableFull, StrategyTableFull, log_no_impact_strategy, solve_full, value_full
from .model import (AdmissibilityError, DiscreteCompensator, LogUtility, ModelError, ModelParams, PowerUtility,
                    generator_matrix, reference_params, utility_value, wealth_after_jump)
from .partial_info import (CFLError, Grid2, ValueTablePartial, averaged_parameter_strategy, evaluate_fixed_strategy,
                           make_grid, solve_partial, value_partial)
from .simulator import estimate_value, simulate_path

__all__ = [
    "AdmissibilityError", "CFLError", "DiscreteCompensator", "Grid2", "LogUtility", "ModelError", "ModelParams",
    "PowerUtility", "StrategyTableFull", "ValueTableFull", "ValueTablePartial", "averaged_parameter_strategy",
    "bayes_update", "estimate_value", "evaluate_fixed_strategy", "filter_drift", "generator_matrix",
    "log_no_impact_strategy", "make_grid", "reference_params", "propagate", "simulate_path", "solve_full",
    "solve_partial", "utility_value", "value_full", "value_partial", "wealth_after_jump",
]
