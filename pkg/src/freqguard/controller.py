"""Distributed transient-frequency controller.

For a controlled bus ``i`` the natural deceleration term is

    q_i = E_i * omega_i + [D^T Y_b]_i sin(lambda) - p_i

and the Lipschitz controller is zero inside the deadband
``[omega_lo_th, omega_hi_th]``; above it the input is
``min(0, -a_up(omega - omega_hi) / (omega - omega_hi_th) + q_i)`` and below it
``max(0, a_lo(omega_lo - omega) / (omega_lo_th - omega) + q_i)``.

A linear class-K slope of ``math.inf`` selects the discontinuous limit, which
only acts at (or beyond) the safe bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:
    from .network import PowerNetwork
    from .state import SystemState


@dataclass(frozen=True)
class ClassK:
    """Strictly increasing function with value 0 at 0.

    Either linear (``gamma``) or a piecewise-linear table of ``(s, alpha(s))``
    points, extended linearly beyond its end points.
    """

    gamma: float | None = None
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if (self.gamma is None) == (self.table is None):
            raise ValidationError("class-K needs exactly one of gamma or table")
        if self.gamma is not None and not self.gamma > 0:
            raise ValidationError(f"class-K slope must be positive, got {self.gamma}")
        if self.table is not None:
            s = np.array([pt[0] for pt in self.table])
            a = np.array([pt[1] for pt in self.table])
            if len(s) < 2 or np.any(np.diff(s) <= 0) or np.any(np.diff(a) <= 0):
                raise ValidationError("class-K table must be strictly increasing in both columns")
            if not s[0] < 0 < s[-1]:
                raise ValidationError("class-K table must bracket 0")
            if abs(float(np.interp(0.0, s, a))) > 1e-12:
                raise ValidationError("class-K table must pass through (0, 0)")

    @classmethod
    def linear(cls, gamma: float) -> "ClassK":
        return cls(gamma=float(gamma))

    @classmethod
    def from_table(cls, points: Sequence[tuple[float, float]]) -> "ClassK":
        return cls(table=tuple((float(s), float(a)) for s, a in points))

    @property
    def is_linear(self) -> bool:
        return self.gamma is not None

    @property
    def is_infinite(self) -> bool:
        return self.gamma is not None and math.isinf(self.gamma)

    def __call__(self, s):
        if self.gamma is not None:
            return self.gamma * np.asarray(s, dtype=float)
        pts = np.array(self.table)
        s = np.asarray(s, dtype=float)
        out = np.interp(s, pts[:, 0], pts[:, 1])
        lo_slope = (pts[1, 1] - pts[0, 1]) / (pts[1, 0] - pts[0, 0])
        hi_slope = (pts[-1, 1] - pts[-2, 1]) / (pts[-1, 0] - pts[-2, 0])
        out = np.where(s < pts[0, 0], pts[0, 1] + lo_slope * (s - pts[0, 0]), out)
        return np.where(s > pts[-1, 0], pts[-1, 1] + hi_slope * (s - pts[-1, 0]), out)


@dataclass(frozen=True)
class ControlledBusSpec:
    """Safe band, deadband thresholds and class-K shaping of one controlled bus (rad/s)."""

    bus_id: int
    omega_lo: float
    omega_hi: float
    omega_lo_th: float
    omega_hi_th: float
    kappa_upper: ClassK
    kappa_lower: ClassK
    epsilon_shrink: float = 0.0

    def __post_init__(self) -> None:
        if not self.omega_lo < self.omega_lo_th < self.omega_hi_th < self.omega_hi:
            raise ValidationError(
                f"bus {self.bus_id}: need omega_lo < omega_lo_th < omega_hi_th < omega_hi"
            )
        if self.epsilon_shrink < 0:
            raise ValidationError("epsilon_shrink must be nonnegative")
        if not (self.omega_hi - self.epsilon_shrink > self.omega_hi_th
                and self.omega_lo + self.epsilon_shrink < self.omega_lo_th):
            raise ValidationError(f"bus {self.bus_id}: epsilon_shrink swallows the barrier band")

    @property
    def hi_eff(self) -> float:
        return self.omega_hi - self.epsilon_shrink

    @property
    def lo_eff(self) -> float:
        return self.omega_lo + self.epsilon_shrink

    @property
    def gamma(self) -> float:
        """Common linear slope; raises when the class-K functions are not both linear and equal."""
        if not (self.kappa_upper.is_linear and self.kappa_upper == self.kappa_lower):
            raise ValidationError(f"bus {self.bus_id}: requires a common linear class-K function")
        return float(self.kappa_upper.gamma)

    def with_gamma(self, gamma: float) -> "ControlledBusSpec":
        k = ClassK.linear(gamma)
        return ControlledBusSpec(self.bus_id, self.omega_lo, self.omega_hi, self.omega_lo_th,
                                 self.omega_hi_th, k, k, self.epsilon_shrink)

    def with_shrink(self, epsilon: float) -> "ControlledBusSpec":
        return ControlledBusSpec(self.bus_id, self.omega_lo, self.omega_hi, self.omega_lo_th,
                                 self.omega_hi_th, self.kappa_upper, self.kappa_lower, epsilon)

    def band_distance(self, omega):
        """Distance of ``omega`` to the safe band ``[omega_lo, omega_hi]``."""
        omega = np.asarray(omega, dtype=float)
        return np.maximum(np.maximum(self.omega_lo - omega, omega - self.omega_hi), 0.0)


@dataclass(frozen=True)
class UncertaintyBounds:
    """Uniform bounds on measurement and parameter errors at one controlled bus."""

    eps_omega: float = 0.0
    eps_lambda: float = 0.0
    eps_p: float = 0.0
    eps_E: float = 0.0
    E_hat: float | None = None

    def __post_init__(self) -> None:
        for name in ("eps_omega", "eps_lambda", "eps_p", "eps_E"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.E_hat is not None and not self.E_hat > 0:
            raise ValidationError("E_hat must be positive")


def assumption_violations(spec: ControlledBusSpec, unc: UncertaintyBounds,
                          omega_inf: float, E_true: float | None = None) -> list[str]:
    """Clauses of the bounded-uncertainty assumption that fail (empty when all hold)."""
    bad = []
    eo = unc.eps_omega
    if not (spec.omega_lo_th + eo < omega_inf < spec.omega_hi_th - eo):
        bad.append("omega_inf not inside the deadband shrunk by eps_omega")
    if not eo < min(spec.omega_hi - spec.omega_hi_th, spec.omega_lo_th - spec.omega_lo):
        bad.append("eps_omega not smaller than the barrier band widths")
    if E_true is not None and unc.E_hat is not None and abs(unc.E_hat - E_true) > unc.eps_E + 1e-15:
        bad.append("|E_hat - E| exceeds eps_E")
    return bad


# ---------------------------------------------------------------------------
# Vectorized law
# ---------------------------------------------------------------------------


class ControllerBank:
    """Array form of several controlled-bus specs for batched evaluation.

    ``inputs(omega_c, q_c)`` takes arrays whose last axis enumerates the specs
    in the order given.
    """

    def __init__(self, net: PowerNetwork, specs: Sequence[ControlledBusSpec]):
        self.specs = tuple(specs)
        self.idx = np.array([net.index_of(s.bus_id) for s in self.specs], dtype=int)
        self.hi = np.array([s.hi_eff for s in self.specs])
        self.lo = np.array([s.lo_eff for s in self.specs])
        self.hi_th = np.array([s.omega_hi_th for s in self.specs])
        self.lo_th = np.array([s.omega_lo_th for s in self.specs])
        self.disc = np.array([s.kappa_upper.is_infinite or s.kappa_lower.is_infinite
                              for s in self.specs], dtype=bool)
        self.all_linear = all(s.kappa_upper.is_linear and s.kappa_lower.is_linear for s in self.specs)
        if self.all_linear:
            self.g_up = np.array([s.kappa_upper.gamma for s in self.specs])
            self.g_lo = np.array([s.kappa_lower.gamma for s in self.specs])
            self.g_up[np.isinf(self.g_up)] = 1.0
            self.g_lo[np.isinf(self.g_lo)] = 1.0

    def __len__(self) -> int:
        return len(self.specs)

    def _alpha(self, which: str, s: np.ndarray) -> np.ndarray:
        if self.all_linear:
            return (self.g_up if which == "up" else self.g_lo) * s
        out = np.empty_like(s)
        for k, spec in enumerate(self.specs):
            kappa = spec.kappa_upper if which == "up" else spec.kappa_lower
            out[..., k] = 1.0 * s[..., k] if kappa.is_infinite else kappa(s[..., k])
        return out

    def inputs(self, omega_c: np.ndarray, q_c: np.ndarray) -> np.ndarray:
        upper = omega_c > self.hi_th
        lower = omega_c < self.lo_th
        if not (upper.any() or lower.any()):
            # deadband everywhere (the discontinuous law is zero there too)
            return np.zeros(np.shape(omega_c))
        d_up = np.where(upper, omega_c - self.hi_th, 1.0)
        d_lo = np.where(lower, self.lo_th - omega_c, 1.0)
        up_val = np.minimum(0.0, -self._alpha("up", omega_c - self.hi) / d_up + q_c)
        lo_val = np.maximum(0.0, self._alpha("lo", self.lo - omega_c) / d_lo + q_c)
        u = np.where(upper, up_val, np.where(lower, lo_val, 0.0))
        if self.disc.any():
            u_inf = np.where(omega_c >= self.hi, np.minimum(0.0, q_c),
                             np.where(omega_c <= self.lo, np.maximum(0.0, q_c), 0.0))
            u = np.where(self.disc, u_inf, u)
        return u

    def inputs_discontinuous(self, omega_c: np.ndarray, q_c: np.ndarray) -> np.ndarray:
        return np.where(omega_c >= self.hi, np.minimum(0.0, q_c),
                        np.where(omega_c <= self.lo, np.maximum(0.0, q_c), 0.0))


# ---------------------------------------------------------------------------
# Per-bus operations
# ---------------------------------------------------------------------------


def q_i(net: PowerNetwork, state: SystemState, p_now, i: int) -> float:
    """Natural deceleration term of bus ``i`` (bus id)."""
    k = net.index_of(i)
    p_now = np.asarray(p_now, dtype=float)
    return float(net.E[k] * state.omega[k] + net.DtYb[k] @ np.sin(state.lam) - p_now[k])


def _single(net: PowerNetwork, spec: ControlledBusSpec, omega_i: float, q: float,
            discontinuous: bool = False) -> float:
    bank = ControllerBank(net, [spec])
    w = np.array([omega_i])
    qq = np.array([q])
    u = bank.inputs_discontinuous(w, qq) if discontinuous else bank.inputs(w, qq)
    return float(u[0])


def u_i(net: PowerNetwork, spec: ControlledBusSpec, state: SystemState, p_now, i: int) -> float:
    """Lipschitz controller input at bus ``i``."""
    if spec.bus_id != i:
        raise ValidationError(f"spec is for bus {spec.bus_id}, not {i}")
    k = net.index_of(i)
    return _single(net, spec, float(state.omega[k]), q_i(net, state, p_now, i))


def u_i_discontinuous(net: PowerNetwork, spec: ControlledBusSpec, state: SystemState,
                      p_now, i: int) -> float:
    """Discontinuous limit of the controller as the class-K slope grows without bound.

    Beyond the safe bounds the boundary rule is extended (``min(0, q)`` above,
    ``max(0, q)`` below), which the limit itself leaves undefined.
    """
    if spec.bus_id != i:
        raise ValidationError(f"spec is for bus {spec.bus_id}, not {i}")
    k = net.index_of(i)
    return _single(net, spec, float(state.omega[k]), q_i(net, state, p_now, i), discontinuous=True)


def u_hat_i(net: PowerNetwork, spec: ControlledBusSpec, uncertainty: UncertaintyBounds,
            measured_state: SystemState, measured_p, i: int, flow_error: float = 0.0) -> float:
    """Controller evaluated on measured state/injection with the estimated damping.

    ``flow_error`` is the error on the aggregate line flow into bus ``i``.
    """
    k = net.index_of(i)
    E_hat = net.E[k] if uncertainty.E_hat is None else uncertainty.E_hat
    w = float(measured_state.omega[k])
    q = E_hat * w + float(net.DtYb[k] @ np.sin(measured_state.lam)) + flow_error \
        - float(np.asarray(measured_p)[k])
    return _single(net, spec, w, q)


def lipschitz_probe(spec: ControlledBusSpec, net: PowerNetwork, i: int, sample_count: int,
                    radius: float, center: SystemState, p_now, *, discontinuous: bool = False,
                    seed: int = 0) -> float:
    """Largest sampled ratio ``|u(x) - u(y)| / ||x - y||`` over pairs straddling ``center``.

    Pairs are ``center +/- radius * v`` with ``v`` a random admissible direction
    (angles perturbed through ``theta``); half of the directions are dominated
    by the bus's own frequency so the pairs cross any threshold there.
    """
    from .state import SystemState

    rng = np.random.default_rng(seed)
    k = net.index_of(i)
    D = net.D
    law = u_i_discontinuous if discontinuous else u_i
    best = 0.0
    for s in range(sample_count):
        dtheta = rng.standard_normal(net.n)
        domega = rng.standard_normal(net.n)
        if s % 2 == 0:
            dtheta *= 1e-2
            domega *= 1e-2
            domega[k] = 1.0
        dlam = D @ dtheta
        norm = math.sqrt(float(dlam @ dlam + domega @ domega))
        dlam, domega = dlam / norm, domega / norm
        x = SystemState(center.lam + radius * dlam, center.omega + radius * domega)
        y = SystemState(center.lam - radius * dlam, center.omega - radius * domega)
        diff = abs(law(net, spec, x, p_now, i) - law(net, spec, y, p_now, i))
        best = max(best, diff / (2.0 * radius))
    return best
