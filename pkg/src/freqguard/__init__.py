"""Transient frequency safety control for lossless power networks."""

from .controller import ClassK, ControlledBusSpec, UncertaintyBounds
from .energy import EnergyContext, compute_c, energy_V, in_phi, in_phi_bar
from .equilibrium import EquilibriumInfo, omega_inf, solve_equilibrium, sync_condition
from .network import PowerNetwork, incidence_matrix, load_network, weighted_laplacian
from .state import SystemState

__all__ = [
    "ClassK", "ControlledBusSpec", "UncertaintyBounds", "EnergyContext", "compute_c",
    "energy_V", "in_phi", "in_phi_bar", "EquilibriumInfo", "omega_inf", "solve_equilibrium",
    "sync_condition", "PowerNetwork", "incidence_matrix", "load_network", "weighted_laplacian",
    "SystemState",
]
