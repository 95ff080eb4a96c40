"""Certified bounds: attractivity envelope, control effort, robustness margin."""

from .effort import (EffortBoundProblem, EffortReport, SolverSettings, in_H_minus, in_H_plus,
                     in_M_minus, in_M_plus, solve_Q, solve_R_lower, solve_R_upper, u_max, u_min,
                     effort_report)
from .envelope import EnvelopeResult, entry_time_estimate, envelope_z, exponential_bound
from .robust import condition_lhs, find_min_delta, robust_delta_check

__all__ = [
    "EffortBoundProblem", "EffortReport", "SolverSettings", "in_H_minus", "in_H_plus",
    "in_M_minus", "in_M_plus", "solve_Q", "solve_R_lower", "solve_R_upper", "u_max", "u_min",
    "effort_report", "EnvelopeResult", "entry_time_estimate", "envelope_z", "exponential_bound",
    "condition_lhs", "find_min_delta", "robust_delta_check",
]
