"""Energy function, region-of-attraction level and the sets Phi / Phi_bar."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import EquilibriumInfo
from .errors import MissingParameterError, ValidationError
from .network import PowerNetwork
from .state import SystemState

HALF_PI = 0.5 * math.pi
MEMBERSHIP_SLACK = 1e-12


def potential_a(lam, lam_inf):
    """Per-line potential ``cos l* - cos l - l sin l* + l* sin l*`` (zero at ``l = l*``)."""
    lam = np.asarray(lam, dtype=float)
    s = np.sin(lam_inf)
    return np.cos(lam_inf) - np.cos(lam) - lam * s + lam_inf * s


def energy_arrays(net: PowerNetwork, eq: EquilibriumInfo, lam, omega) -> np.ndarray:
    """Energy for stacked states; the last axis is the edge/bus axis."""
    dw = np.asarray(omega, dtype=float) - eq.omega_inf
    kin = 0.5 * np.sum(net.M * dw * dw, axis=-1)
    return kin + np.sum(net.b * potential_a(lam, eq.lambda_inf), axis=-1)


def energy_V(net: PowerNetwork, eq: EquilibriumInfo, state: SystemState) -> float:
    return float(energy_arrays(net, eq, state.lam, state.omega))


def boundary_levels(net: PowerNetwork, eq: EquilibriumInfo) -> tuple[np.ndarray, np.ndarray]:
    """Per-line minima of V at nominal frequency with the line pinned at +pi/2 and -pi/2.

    The problem is separable, so every other line sits at its equilibrium
    value where its potential vanishes.
    """
    return (net.b * potential_a(HALF_PI, eq.lambda_inf),
            net.b * potential_a(-HALF_PI, eq.lambda_inf))


def compute_c(net: PowerNetwork, eq: EquilibriumInfo) -> float:
    """Minimum of V over the boundary of the closed angle box at nominal frequency."""
    if not eq.in_gamma:
        raise ValidationError("equilibrium must lie strictly inside the angle box")
    up, lo = boundary_levels(net, eq)
    return float(min(up.min(initial=math.inf), lo.min(initial=math.inf)))


@dataclass(frozen=True)
class EnergyContext:
    equilibrium: EquilibriumInfo
    c_level: float
    beta: float = 1.01
    c_bar: float | None = None

    def __post_init__(self) -> None:
        if self.c_level < 0:
            raise ValidationError("c_level must be nonnegative")
        if not self.beta > 1:
            raise ValidationError("beta must exceed 1")
        if self.c_bar is not None and self.c_bar < 0:
            raise ValidationError("c_bar must be nonnegative")

    @classmethod
    def build(cls, net: PowerNetwork, eq: EquilibriumInfo, beta: float = 1.01,
              c_bar: float | None = None) -> "EnergyContext":
        return cls(eq, compute_c(net, eq), beta, c_bar)

    @property
    def phi_level(self) -> float:
        return self.c_level / self.beta


def in_phi(net: PowerNetwork, ctx: EnergyContext, state: SystemState) -> bool:
    if np.any(np.abs(state.lam) > HALF_PI):
        return False
    return energy_V(net, ctx.equilibrium, state) <= ctx.phi_level + MEMBERSHIP_SLACK


def energy_V_bar(net: PowerNetwork, eq: EquilibriumInfo, state: SystemState) -> float:
    """Quadratic surrogate of V."""
    dw = state.omega - eq.omega_inf
    dl = state.lam - eq.lambda_inf
    return float(0.5 * np.sum(net.M * dw * dw) + 0.5 * np.sum(net.b * dl * dl))


def in_phi_bar(net: PowerNetwork, ctx: EnergyContext, state: SystemState) -> bool:
    if ctx.c_bar is None:
        raise MissingParameterError("c_bar is required for ellipsoid membership")
    return energy_V_bar(net, ctx.equilibrium, state) <= ctx.c_bar + MEMBERSHIP_SLACK
