"""Optimal spatial release planning for Wolbachia-infected mosquitoes.

The package solves the single-release optimal control problem for the
reduced bistable proportion model on heterogeneous carrying-capacity
landscapes, simulates the diffusive and two-species reference models,
and ships a CLI for reproducible experiment runs.
"""

from .domain import CarryingCapacity, Field, Grid, build_grid, eval_K
from .dynamics import FlowTable, check_hypothesis_H, propagate, switch_w
from .params import REF_PARAMS, BioParams, ParameterError, compute_T0, derived_thresholds, theta
from .planner import Budget, Plan, solve, solve_large_T, solve_small_T

__version__ = "0.1.0"

__all__ = [
    "BioParams", "Budget", "CarryingCapacity", "Field", "FlowTable", "Grid",
    "ParameterError", "Plan", "REF_PARAMS", "build_grid", "check_hypothesis_H",
    "compute_T0", "derived_thresholds", "eval_K", "propagate", "solve",
    "solve_large_T", "solve_small_T", "switch_w", "theta",
]
