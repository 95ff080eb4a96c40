"""Comparison envelope for a controlled frequency above its safe bound.

Above the band the closed loop satisfies ``M dw/dt <= -a(w - hi)/(w - hi_th)``,
so the scalar solution ``z`` of the equality dominates ``w``. The ODE is
integrated in the gap ``y = z - hi`` to avoid cancellation near the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..controller import ClassK, ControlledBusSpec
from ..errors import DomainError, NotReachedError, ValidationError


@dataclass(frozen=True)
class EnvelopeResult:
    t: np.ndarray
    z: np.ndarray
    gap: np.ndarray  # z - omega_hi (effective bound)
    implicit_residuals: np.ndarray | None
    omega_hi: float
    omega_hi_th: float
    omega0: float
    M: float
    gamma: float | None

    def exponential_bound(self, t) -> np.ndarray:
        if self.gamma is None:
            raise ValidationError("exponential bound needs a linear class-K function")
        return exponential_bound(self.omega_hi, self.omega_hi_th, self.omega0, self.gamma, self.M, t)


def exponential_bound(omega_hi: float, omega_hi_th: float, omega0: float, gamma: float,
                      M: float, t) -> np.ndarray:
    """``hi + (w0 - hi) exp((-gamma t / M + w0 - hi) / (hi - hi_th))``."""
    t = np.asarray(t, dtype=float)
    a = omega_hi - omega_hi_th
    return omega_hi + (omega0 - omega_hi) * np.exp((-gamma * t / M + omega0 - omega_hi) / a)


def _rate(kappa: ClassK, a: float, M: float):
    if kappa.is_linear:
        g = kappa.gamma

        def f(y):
            return -g * y / ((y + a) * M)
    else:
        def f(y):
            return -float(kappa(y)) / ((y + a) * M)
    return f


def _rk4(f, y: float, h: float) -> float:
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def envelope_z(spec: ControlledBusSpec, M_i: float, omega0: float, t_end: float = 10.0,
               dt: float = 1e-3) -> EnvelopeResult:
    """Integrate the envelope from ``omega0`` (rad/s) with RK4.

    A positive ``spec.epsilon_shrink`` moves the bound to ``hi - eps``.
    """
    hi = spec.hi_eff
    th = spec.omega_hi_th
    if not omega0 > spec.omega_hi:
        raise DomainError(f"envelope needs omega0 > omega_hi ({omega0} <= {spec.omega_hi})")
    if not (M_i > 0 and dt > 0 and t_end > 0):
        raise ValidationError("M_i, dt and t_end must be positive")
    if spec.kappa_upper.is_infinite:
        raise ValidationError("envelope undefined for the discontinuous controller")
    a = hi - th
    f = _rate(spec.kappa_upper, a, M_i)
    N = int(math.floor(t_end / dt + 1e-9))
    t = np.arange(N + 1) * dt
    y = np.empty(N + 1)
    y[0] = omega0 - hi
    for k in range(N):
        y[k + 1] = _rk4(f, y[k], dt)
    z = hi + y
    res = None
    gamma = None
    if spec.kappa_upper.is_linear:
        gamma = float(spec.kappa_upper.gamma)
        y0 = y[0]
        res = np.abs((y - y0) + a * np.log(y / y0) + gamma * t / M_i)
    return EnvelopeResult(t, z, y, res, hi, th, omega0, M_i, gamma)


def entry_time_estimate(spec: ControlledBusSpec, M_i: float, omega0: float,
                        horizon: float = 100.0, dt: float = 1e-3) -> float:
    """First time the shrunk-bound envelope reaches the true bound ``omega_hi``.

    With no shrink the envelope only approaches the bound asymptotically, so
    :class:`NotReachedError` is raised straight away.
    """
    eps = spec.epsilon_shrink
    if not omega0 > spec.omega_hi:
        raise DomainError(f"needs omega0 > omega_hi ({omega0} <= {spec.omega_hi})")
    if eps <= 0:
        raise NotReachedError("without bound shrinking the envelope never reaches omega_hi")
    hi = spec.hi_eff
    a = hi - spec.omega_hi_th
    f = _rate(spec.kappa_upper, a, M_i)
    y = omega0 - hi
    N = int(math.ceil(horizon / dt))
    for k in range(N):
        y_next = _rk4(f, y, dt)
        if y_next <= eps:
            lo_h, hi_h = 0.0, dt
            for _ in range(60):
                mid = 0.5 * (lo_h + hi_h)
                if _rk4(f, y, mid) <= eps:
                    hi_h = mid
                else:
                    lo_h = mid
            return k * dt + hi_h
        y = y_next
    raise NotReachedError(f"envelope did not reach omega_hi within {horizon} s")
