"""Real-space steady-state few-photon propagation through the Rydberg medium."""
from .correlations import CorrelationMap, correlation_map, g2_tau_profile, g3_tau_profile
from .profile import DensityProfile
from .solver import (
    CorrelationResult,
    Grid,
    SingleSolution,
    WavefunctionGrid,
    analytic_transmission,
    default_grid,
    eliminated_coefficient,
    solve_single,
    solve_three,
    solve_two,
    three_body_memory_estimate,
)

__all__ = [
    "CorrelationMap", "CorrelationResult", "DensityProfile", "Grid", "SingleSolution",
    "WavefunctionGrid", "analytic_transmission", "correlation_map", "default_grid",
    "eliminated_coefficient", "g2_tau_profile", "g3_tau_profile", "solve_single",
    "solve_three", "solve_two", "three_body_memory_estimate",
]
