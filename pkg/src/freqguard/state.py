"""State of the swing dynamics in edge/frequency coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .network import PowerNetwork


@dataclass(frozen=True)
class SystemState:
    """Edge angles ``lam`` (rad, length m), frequencies ``omega`` (rad/s, length n)."""

    lam: np.ndarray
    omega: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))

    @classmethod
    def from_theta(cls, net: PowerNetwork, theta, omega, t: float = 0.0) -> "SystemState":
        return cls(net.D @ np.asarray(theta, dtype=float), omega, t)

    def packed(self) -> np.ndarray:
        return np.concatenate([self.lam, self.omega])

    @classmethod
    def unpack(cls, x: np.ndarray, m: int, t: float = 0.0) -> "SystemState":
        return cls(x[:m].copy(), x[m:].copy(), t)

    def range_residual(self, net: PowerNetwork) -> float:
        """``||(I - D D^+) lam||_inf``."""
        return float(np.max(np.abs(self.lam - net.range_projector @ self.lam), initial=0.0))

    def is_admissible(self, net: PowerNetwork, tol: float = 1e-8) -> bool:
        return self.lam.shape == (net.m,) and self.omega.shape == (net.n,) and \
            self.range_residual(net) <= tol
