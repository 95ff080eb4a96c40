"""Closed-loop simulation of the swing dynamics with the frequency controller.

Integration is classical fixed-step RK4. Within one step the injection and
the controller's activation are taken from inside the step: the first stage
uses right limits at ``t`` and the last stage left limits at ``t + dt``, so a
window edge on the step grid never leaks into the neighbouring step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .controller import ControllerBank, ControlledBusSpec, UncertaintyBounds
from .energy import EnergyContext, energy_arrays
from .equilibrium import EquilibriumInfo, solve_equilibrium
from .errors import BlowupError, BoundError, ParseError, ValidationError
from .network import PowerNetwork, ScheduleSegment
from .state import SystemState

__all__ = [
    "SystemState", "ControllerMode", "Sinusoid", "SeededUniform", "MeasurementErrors",
    "make_measurement_errors", "Scenario", "Trajectory", "Event", "AuditReport",
    "closed_loop_rhs", "integrate", "simulate_batch", "monitor_report", "write_trajectory_csv",
    "scenario_from_dict", "input_oscillation",
]


# ---------------------------------------------------------------------------
# Measurement errors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sinusoid:
    """``amp * sin(2 pi freq t + phase)`` on each channel (rad/s and p.u.).

    ``buses`` restricts the signal to some controlled buses (default: all).
    """

    freq: float
    amp_omega: float
    amp_lambda: float = 0.0
    amp_p: float = 0.0
    phase: float = 0.0
    buses: tuple[int, ...] | None = None


@dataclass(frozen=True)
class SeededUniform:
    """Values drawn uniformly within ``scale`` times the bounds, held for ``hold`` seconds."""

    hold: float = 0.01
    scale: float = 1.0
    horizon: float = 120.0


@dataclass(frozen=True)
class MeasurementErrors:
    """Error signals for the controlled buses listed in ``bus_ids``.

    ``omega``, ``flow`` and ``p`` map a time to an array over ``bus_ids``;
    ``E_hat`` holds the damping estimate used by each controller.
    """

    bus_ids: tuple[int, ...]
    E_hat: np.ndarray
    kind: Any
    bounds: tuple[UncertaintyBounds, ...]
    _table: np.ndarray | None = field(default=None, repr=False)
    p_scale: np.ndarray | None = None
    _mask: np.ndarray | None = field(default=None, repr=False)

    def _values(self, t: float) -> np.ndarray:
        """Array (3, k): rows are omega, flow and p errors."""
        k = len(self.bus_ids)
        if isinstance(self.kind, Sinusoid):
            s = math.sin(2.0 * math.pi * self.kind.freq * t + self.kind.phase)
            amps = np.array([self.kind.amp_omega, self.kind.amp_lambda, self.kind.amp_p])
            return (amps * s)[:, None] * self._mask[None, :]
        if self._table is None:
            return np.zeros((3, k))
        idx = min(int(t // self.kind.hold), self._table.shape[0] - 1)
        return self._table[max(idx, 0)]

    def omega(self, t: float) -> np.ndarray:
        return self._values(t)[0]

    def flow(self, t: float) -> np.ndarray:
        return self._values(t)[1]

    def p(self, t: float) -> np.ndarray:
        return self._values(t)[2]


def make_measurement_errors(uncertainty: Mapping[int, UncertaintyBounds], kind: Any,
                            seed: int = 0, E_true: Mapping[int, float] | None = None,
                            p_scale: Mapping[int, float] | None = None) -> MeasurementErrors:
    """Deterministic error signals within the declared bounds.

    ``kind`` is a :class:`Sinusoid` or a :class:`SeededUniform`. ``E_true``
    supplies the damping used when a bound omits ``E_hat``. With ``p_scale``
    the injection estimate becomes ``p_scale * p + eps_p(t)``; keeping that
    within ``eps_p`` of ``p`` is left to the caller.
    """
    ids = tuple(sorted(uncertainty))
    bounds = tuple(uncertainty[i] for i in ids)
    table = None
    mask = None
    if isinstance(kind, Sinusoid):
        sel = set(ids) if kind.buses is None else set(kind.buses)
        unknown = sel - set(ids)
        if unknown:
            raise ValidationError(f"sinusoid targets buses without bounds: {sorted(unknown)}")
        mask = np.array([1.0 if i in sel else 0.0 for i in ids])
        for i, b in zip(ids, bounds):
            if i not in sel:
                continue
            for amp, bound, nm in ((kind.amp_omega, b.eps_omega, "omega"),
                                   (kind.amp_lambda, b.eps_lambda, "lambda"),
                                   (kind.amp_p, b.eps_p, "p")):
                if abs(amp) > bound * (1 + 1e-12):
                    raise BoundError(f"bus {i}: {nm} error amplitude {abs(amp)} exceeds bound {bound}")
    elif isinstance(kind, SeededUniform):
        if not 0 <= kind.scale <= 1:
            raise BoundError("seeded_uniform scale must lie in [0, 1]")
        if kind.hold <= 0:
            raise ValidationError("hold must be positive")
        rng = np.random.default_rng(seed)
        n_hold = int(math.ceil(kind.horizon / kind.hold)) + 1
        amps = np.array([[b.eps_omega, b.eps_lambda, b.eps_p] for b in bounds]).T * kind.scale
        table = rng.uniform(-1.0, 1.0, size=(n_hold, 3, len(ids))) * amps
    else:
        raise ValidationError(f"unknown error kind {kind!r}")
    E_hat = []
    for i, b in zip(ids, bounds):
        if b.E_hat is not None:
            if E_true is not None and i in E_true and abs(b.E_hat - E_true[i]) > b.eps_E * (1 + 1e-12):
                raise BoundError(f"bus {i}: |E_hat - E| exceeds eps_E")
            E_hat.append(b.E_hat)
        elif E_true is not None and i in E_true:
            E_hat.append(E_true[i])
        else:
            E_hat.append(math.nan)
    ps = None if p_scale is None else np.array([p_scale.get(i, 1.0) for i in ids])
    return MeasurementErrors(ids, np.array(E_hat), kind, bounds, table, ps, mask)


# ---------------------------------------------------------------------------
# Controller modes and scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControllerMode:
    kind: str = "on"
    t_on: float = 0.0
    errors: MeasurementErrors | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("off", "on", "delayed", "discontinuous", "robust"):
            raise ValidationError(f"unknown controller mode {self.kind!r}")
        if self.kind == "robust" and self.errors is None:
            raise ValidationError("robust mode needs measurement errors")

    @classmethod
    def off(cls) -> "ControllerMode":
        return cls("off")

    @classmethod
    def on(cls) -> "ControllerMode":
        return cls("on")

    @classmethod
    def delayed(cls, t_on: float) -> "ControllerMode":
        return cls("delayed", t_on=float(t_on))

    @classmethod
    def discontinuous(cls) -> "ControllerMode":
        return cls("discontinuous")

    @classmethod
    def robust(cls, errors: MeasurementErrors) -> "ControllerMode":
        return cls("robust", errors=errors)

    def active(self, t: float, left: bool = False) -> bool:
        if self.kind == "off":
            return False
        if self.kind == "delayed":
            return t > self.t_on if left else t >= self.t_on
        return True

    def label(self) -> str:
        return f"delayed({self.t_on:g})" if self.kind == "delayed" else self.kind


@dataclass(frozen=True)
class Scenario:
    network: PowerNetwork
    t_end: float
    dt: float = 1e-3
    initial_state: SystemState | str = "equilibrium"
    injection_schedule: Mapping[int, Sequence[ScheduleSegment]] = field(default_factory=dict)
    controller_mode: ControllerMode = field(default_factory=ControllerMode.on)
    seed: int = 0
    gamma: Mapping[int, float] = field(default_factory=dict)
    omega_guard: float = 1e3
    reproject_every: int = 1000
    record_energy: bool = True
    name: str = ""

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.t_end > 0:
            raise ValidationError("t_end must be positive")
        for bus, segs in self.injection_schedule.items():
            for s in segs:
                if s.start < 0 or s.start > self.t_end or (math.isfinite(s.stop) and s.stop > self.t_end):
                    raise ValidationError(f"bus {bus}: window [{s.start}, {s.stop}) outside [0, t_end]")
        if isinstance(self.initial_state, str) and self.initial_state != "equilibrium":
            raise ValidationError("initial_state must be a SystemState or 'equilibrium'")
        for bus in self.gamma:
            if bus not in self.network.controlled_set:
                raise ValidationError(f"gamma override for uncontrolled bus {bus}")

    def effective_network(self) -> PowerNetwork:
        net = self.network
        if self.injection_schedule:
            net = net.with_schedules(self.injection_schedule)
        if self.gamma:
            net = net.with_controllers(
                c.with_gamma(self.gamma[c.bus_id]) if c.bus_id in self.gamma else c
                for c in net.controllers
            )
        return net

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------


class _Dynamics:
    """Batched right-hand side; state arrays carry a leading batch axis."""

    def __init__(self, net: PowerNetwork, specs: Sequence[ControlledBusSpec], mode: ControllerMode):
        self.net = net
        self.mode = mode
        self.DT = np.ascontiguousarray(net.D.T)
        self.YD = np.ascontiguousarray(net.DtYb.T)  # m x n
        self.M = np.asarray(net.M)
        self.E = np.asarray(net.E)
        self.bank = ControllerBank(net, specs) if specs else None
        self.ci = self.bank.idx if self.bank else np.zeros(0, dtype=int)
        self.profile = net.injections
        self._p_cache: dict[tuple[float, bool], np.ndarray] = {}
        if mode.kind == "robust":
            err = mode.errors
            pos = {b: k for k, b in enumerate(err.bus_ids)}
            ids = [s.bus_id for s in specs]
            missing = [b for b in ids if b not in pos]
            if missing:
                raise ValidationError(f"no measurement errors declared for buses {missing}")
            self.err_sel = np.array([pos[b] for b in ids], dtype=int)
            E_hat = err.E_hat[self.err_sel]
            self.E_hat = np.where(np.isnan(E_hat), self.E[self.ci], E_hat)
            self.p_scale = None if err.p_scale is None else err.p_scale[self.err_sel]

    def p(self, t: float, left: bool) -> np.ndarray:
        if self.profile.is_constant:
            return self.profile.base
        return self.profile(t, left)

    def controls(self, t: float, left: bool, omega: np.ndarray, flows: np.ndarray,
                 p: np.ndarray) -> np.ndarray:
        if self.bank is None or not self.mode.active(t, left):
            return np.zeros(omega.shape[:-1] + (len(self.ci),))
        ci = self.ci
        w = omega[..., ci]
        if self.mode.kind == "robust":
            err = self.mode.errors
            vals = err._values(t)[:, self.err_sel]
            w_hat = w + vals[0]
            p_hat = p[ci] * (1.0 if self.p_scale is None else self.p_scale) + vals[2]
            q_hat = self.E_hat * w_hat + flows[..., ci] + vals[1] - p_hat
            return self.bank.inputs(w_hat, q_hat)
        q = self.E[ci] * w + flows[..., ci] - p[ci]
        if self.mode.kind == "discontinuous":
            return self.bank.inputs_discontinuous(w, q)
        return self.bank.inputs(w, q)

    def __call__(self, t: float, left: bool, lam: np.ndarray, omega: np.ndarray):
        flows = np.sin(lam) @ self.YD
        p = self.p(t, left)
        u = self.controls(t, left, omega, flows, p)
        force = p - self.E * omega - flows
        if u.shape[-1]:
            force[..., self.ci] += u
        return omega @ self.DT, force / self.M, u


def closed_loop_rhs(net: PowerNetwork, specs: Sequence[ControlledBusSpec] | None,
                    mode: ControllerMode, state: SystemState, t: float) -> SystemState:
    """Time derivative of ``(lambda, omega)``; returned as a state-shaped object."""
    specs = net.controllers if specs is None else specs
    dyn = _Dynamics(net, specs, mode)
    dl, dw, _ = dyn(t, False, state.lam[None, :], state.omega[None, :])
    return SystemState(dl[0], dw[0], t)


# ---------------------------------------------------------------------------
# Trajectories and events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    t: float
    bus: int
    kind: str  # exit, entry, activate, deactivate


@dataclass
class Trajectory:
    t: np.ndarray
    lam: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    controlled_ids: tuple[int, ...]
    V: np.ndarray
    eq_key: np.ndarray
    omega_inf: np.ndarray
    network: PowerNetwork
    mode: ControllerMode
    specs: tuple[ControlledBusSpec, ...]
    events: list[Event] = field(default_factory=list)
    last_nonzero_u: float | None = None
    activation_intervals: dict[int, list[tuple[float, float]]] = field(default_factory=dict)
    name: str = ""

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> SystemState:
        return SystemState(self.lam[k], self.omega[k], float(self.t[k]))

    def omega_of(self, bus_id: int) -> np.ndarray:
        return self.omega[:, self.network.index_of(bus_id)]

    def u_of(self, bus_id: int) -> np.ndarray:
        return self.u[:, self.controlled_ids.index(bus_id)]


class _EnergyTracker:
    """V against the equilibrium of the current injection, cached across steps."""

    def __init__(self, net: PowerNetwork, first: EquilibriumInfo | None):
        self.net = net
        self.key = -1
        self.p_last: np.ndarray | None = None
        self.eq = first
        self.theta = None if first is None else first.theta

    def __call__(self, p: np.ndarray, lam: np.ndarray, omega: np.ndarray) -> tuple[float, int, float]:
        if self.p_last is None or not np.array_equal(p, self.p_last):
            self.eq = solve_equilibrium(self.net, p=p, theta0=self.theta, check_sync=False)
            if self.eq.converged:
                self.theta = self.eq.theta
            self.p_last = p.copy()
            self.key += 1
        if not self.eq.converged:
            return math.nan, self.key, self.eq.omega_inf
        return float(energy_arrays(self.net, self.eq, lam, omega)), self.key, self.eq.omega_inf


def _crossings(t: np.ndarray, x: np.ndarray, level: float) -> np.ndarray:
    """Linear-interpolated times where ``x`` crosses ``level``; sign of the jump attached."""
    s = x - level
    idx = np.flatnonzero((s[:-1] <= 0) != (s[1:] <= 0))
    frac = s[idx] / np.where(s[idx] - s[idx + 1] == 0, 1.0, s[idx] - s[idx + 1])
    return t[idx] + frac * (t[idx + 1] - t[idx])


def _band_events(t: np.ndarray, w: np.ndarray, lo: float, hi: float, bus: int) -> list[Event]:
    inside = (w >= lo) & (w <= hi)
    out: list[Event] = []
    change = np.flatnonzero(inside[1:] != inside[:-1])
    for k in change:
        a, b = w[k], w[k + 1]
        level = hi if max(a, b) > hi else lo
        denom = b - a
        frac = 0.0 if denom == 0 else (level - a) / denom
        frac = min(max(frac, 0.0), 1.0)
        tc = float(t[k] + frac * (t[k + 1] - t[k]))
        out.append(Event(tc, bus, "entry" if inside[k + 1] else "exit"))
    return out


def _activation(t: np.ndarray, u: np.ndarray, bus: int) -> tuple[list[Event], list[tuple[float, float]]]:
    on = u != 0.0
    ev: list[Event] = []
    spans: list[tuple[float, float]] = []
    start = float(t[0]) if on[0] else None
    if on[0]:
        ev.append(Event(float(t[0]), bus, "activate"))
    for k in np.flatnonzero(on[1:] != on[:-1]):
        if on[k + 1]:
            start = float(t[k + 1])
            ev.append(Event(start, bus, "activate"))
        else:
            spans.append((start, float(t[k])))
            ev.append(Event(float(t[k + 1]), bus, "deactivate"))
            start = None
    if start is not None:
        spans.append((start, float(t[-1])))
    return ev, spans


def _events(traj: Trajectory) -> None:
    events: list[Event] = []
    last = None
    for k, spec in enumerate(traj.specs):
        w = traj.omega_of(spec.bus_id)
        events += _band_events(traj.t, w, spec.omega_lo, spec.omega_hi, spec.bus_id)
        ev, spans = _activation(traj.t, traj.u[:, k], spec.bus_id)
        events += ev
        traj.activation_intervals[spec.bus_id] = spans
        nz = np.flatnonzero(traj.u[:, k] != 0.0)
        if nz.size:
            tl = float(traj.t[nz[-1]])
            last = tl if last is None else max(last, tl)
    events.sort(key=lambda e: (e.t, e.bus, e.kind))
    traj.events = events
    traj.last_nonzero_u = last


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------


def _rk4_step(dyn: _Dynamics, t: float, h: float, lam: np.ndarray, omega: np.ndarray):
    l1, w1, _ = dyn(t, False, lam, omega)
    tm = t + 0.5 * h
    l2, w2, _ = dyn(tm, False, lam + 0.5 * h * l1, omega + 0.5 * h * w1)
    l3, w3, _ = dyn(tm, False, lam + 0.5 * h * l2, omega + 0.5 * h * w2)
    l4, w4, _ = dyn(t + h, True, lam + h * l3, omega + h * w3)
    return (lam + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4),
            omega + (h / 6.0) * (w1 + 2.0 * w2 + 2.0 * w3 + w4))


def initial_state_for(scenario: Scenario, net: PowerNetwork | None = None) -> tuple[SystemState, EquilibriumInfo | None]:
    net = net or scenario.effective_network()
    if isinstance(scenario.initial_state, SystemState):
        st = scenario.initial_state
        if not st.is_admissible(net):
            raise ValidationError("initial state is not admissible (lambda outside range(D))")
        return st, None
    eq = solve_equilibrium(net, 0.0)
    if not eq.converged:
        raise ValidationError(f"no equilibrium for the initial injection: {eq.message}")
    return SystemState(eq.lambda_inf.copy(), np.full(net.n, eq.omega_inf), 0.0), eq


def integrate(scenario: Scenario) -> Trajectory:
    """Run one scenario and record states, inputs, energy and events."""
    net = scenario.effective_network()
    specs = tuple(net.controllers)
    dyn = _Dynamics(net, specs, scenario.controller_mode)
    x0, eq0 = initial_state_for(scenario, net)
    h = scenario.dt
    N = scenario.n_steps
    m, n, k = net.m, net.n, len(specs)
    T = np.arange(N + 1) * h
    LAM = np.empty((N + 1, m))
    OM = np.empty((N + 1, n))
    U = np.empty((N + 1, k))
    V = np.full(N + 1, math.nan)
    KEY = np.full(N + 1, -1, dtype=int)
    WINF = np.full(N + 1, math.nan)
    tracker = _EnergyTracker(net, eq0) if scenario.record_energy else None
    P = net.range_projector
    lam = x0.lam[None, :].copy()
    om = x0.omega[None, :].copy()
    guard = scenario.omega_guard

    def record(j: int, t: float, left: bool) -> None:
        LAM[j] = lam[0]
        OM[j] = om[0]
        flows = np.sin(lam) @ dyn.YD
        p = dyn.p(t, left)
        U[j] = dyn.controls(t, left, om, flows, p)[0]
        if tracker is not None:
            V[j], KEY[j], WINF[j] = tracker(p, lam[0], om[0])

    record(0, 0.0, False)
    for j in range(1, N + 1):
        t = T[j - 1]
        lam, om = _rk4_step(dyn, t, h, lam, om)
        if j % scenario.reproject_every == 0:
            lam = lam @ P.T
        if not np.all(np.abs(om) <= guard):
            raise BlowupError(f"|omega| exceeded {guard} rad/s at t={T[j]:.6g}")
        record(j, T[j], True)
    traj = Trajectory(T, LAM, OM, U, tuple(s.bus_id for s in specs), V, KEY, WINF, net,
                      scenario.controller_mode, specs, name=scenario.name)
    _events(traj)
    return traj


@dataclass
class BatchResult:
    t: np.ndarray
    controlled_ids: tuple[int, ...]
    u: np.ndarray  # (N+1, B, k)
    omega_c: np.ndarray  # (N+1, B, k)
    final_lam: np.ndarray
    final_omega: np.ndarray


def simulate_batch(net: PowerNetwork, lam0: np.ndarray, omega0: np.ndarray, t_end: float,
                   dt: float = 1e-3, mode: ControllerMode | None = None,
                   omega_guard: float = 1e3, reproject_every: int = 1000) -> BatchResult:
    """Integrate many initial states of one network at once.

    Only the controlled-bus frequencies and inputs are recorded.
    """
    mode = mode or ControllerMode.on()
    specs = tuple(net.controllers)
    dyn = _Dynamics(net, specs, mode)
    lam = np.array(lam0, dtype=float, ndmin=2)
    om = np.array(omega0, dtype=float, ndmin=2)
    N = int(math.floor(t_end / dt + 1e-9))
    B, k = lam.shape[0], len(specs)
    T = np.arange(N + 1) * dt
    U = np.empty((N + 1, B, k))
    W = np.empty((N + 1, B, k))
    P = net.range_projector

    def record(j: int, t: float, left: bool) -> None:
        flows = np.sin(lam) @ dyn.YD
        U[j] = dyn.controls(t, left, om, flows, dyn.p(t, left))
        W[j] = om[:, dyn.ci]

    record(0, 0.0, False)
    for j in range(1, N + 1):
        lam, om = _rk4_step(dyn, T[j - 1], dt, lam, om)
        if j % reproject_every == 0:
            lam = lam @ P.T
        if not np.all(np.abs(om) <= omega_guard):
            raise BlowupError(f"|omega| exceeded {omega_guard} rad/s at t={T[j]:.6g}")
        record(j, T[j], True)
    return BatchResult(T, tuple(s.bus_id for s in specs), U, W, lam, om)


# ---------------------------------------------------------------------------
# Audit
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    v_max_increase: float
    v_violations: list[tuple[float, float]]
    band_violations: dict[int, list[tuple[float, float]]]
    approach_violations: dict[int, list[tuple[float, float]]]
    started_inside: dict[int, bool]
    first_entry: dict[int, float | None]
    first_exit: dict[int, float | None]
    last_nonzero_u: float | None
    started_in_phi: bool | None = None
    t_start: float = 0.0
    band_margin: float = 0.0

    @property
    def v_monotone(self) -> bool:
        return not self.v_violations

    @property
    def invariant(self) -> bool:
        return not any(self.band_violations.values())

    @property
    def attractive(self) -> bool:
        return not any(self.approach_violations.values())

    def to_dict(self) -> dict[str, Any]:
        def pairs(d):
            return {str(b): [[float(a), float(c)] for a, c in v[:20]] for b, v in d.items()}
        return {
            "t_start": self.t_start,
            "band_margin": self.band_margin,
            "v_max_increase": self.v_max_increase,
            "v_violation_count": len(self.v_violations),
            "band_violation_count": {str(b): len(v) for b, v in self.band_violations.items()},
            "band_violations_head": pairs(self.band_violations),
            "approach_violation_count": {str(b): len(v) for b, v in self.approach_violations.items()},
            "approach_violations_head": pairs(self.approach_violations),
            "started_inside": {str(b): v for b, v in self.started_inside.items()},
            "first_entry": {str(b): v for b, v in self.first_entry.items()},
            "first_exit": {str(b): v for b, v in self.first_exit.items()},
            "last_nonzero_u": self.last_nonzero_u,
            "started_in_phi": self.started_in_phi,
        }


def monitor_report(traj: Trajectory, specs: Sequence[ControlledBusSpec] | None = None,
                   ctx: EnergyContext | None = None, *, t_start: float = 0.0,
                   band_margin: float = 0.0, v_tol: float = 1e-6, band_tol: float = 1e-6,
                   mono_tol: float = 1e-8) -> AuditReport:
    """Audit a trajectory against the closed-loop guarantees.

    * energy: single-step increases of V beyond ``v_tol`` between samples
      that share one injection (and hence one equilibrium);
    * invariance: buses inside ``[lo - margin, hi + margin]`` at ``t_start``
      must stay there;
    * attractivity: buses outside at ``t_start`` must move towards the band
      step by step until they enter, and then stay inside.
    """
    specs = traj.specs if specs is None else tuple(specs)
    dV = np.diff(traj.V)
    same = (traj.eq_key[1:] == traj.eq_key[:-1]) & np.isfinite(dV)
    dV_ok = np.where(same, dV, -np.inf)
    vmax = float(max(0.0, dV_ok.max(initial=0.0)))
    bad = np.flatnonzero(dV_ok > v_tol)
    v_viol = [(float(traj.t[k + 1]), float(dV[k])) for k in bad]
    k0 = int(np.searchsorted(traj.t, t_start - 1e-12))
    t = traj.t[k0:]
    band: dict[int, list[tuple[float, float]]] = {}
    appr: dict[int, list[tuple[float, float]]] = {}
    inside0: dict[int, bool] = {}
    entry: dict[int, float | None] = {}
    exit_: dict[int, float | None] = {}
    for spec in specs:
        b = spec.bus_id
        lo, hi = spec.omega_lo - band_margin, spec.omega_hi + band_margin
        w = traj.omega_of(b)[k0:]
        excess = np.maximum(lo - w, w - hi)
        ins = bool(lo <= w[0] <= hi)
        inside0[b] = ins
        ev = _band_events(t, w, lo, hi, b)
        ent = [e.t for e in ev if e.kind == "entry"]
        ext = [e.t for e in ev if e.kind == "exit"]
        entry[b] = ent[0] if ent else None
        exit_[b] = ext[0] if ext else None
        if ins:
            band[b] = [(float(t[j]), float(excess[j])) for j in np.flatnonzero(excess > band_tol)]
            appr[b] = []
        else:
            band[b] = []
            idx_in = np.flatnonzero(excess <= 0.0)
            first = int(idx_in[0]) if idx_in.size else len(w)
            seg = w[: first + 1] if first < len(w) else w
            step = np.diff(seg)
            worse = step > mono_tol if w[0] > hi else step < -mono_tol
            viol = [(float(t[j + 1]), float(step[j])) for j in np.flatnonzero(worse)]
            if first < len(w):
                after = excess[first:]
                viol += [(float(t[first + j]), float(after[j])) for j in np.flatnonzero(after > band_tol)]
            appr[b] = viol
    in_phi0 = None
    if ctx is not None:
        from .energy import in_phi
        in_phi0 = in_phi(traj.network, ctx, traj.state(0))
    return AuditReport(vmax, v_viol, band, appr, inside0, entry, exit_, traj.last_nonzero_u,
                       in_phi0, t_start, band_margin)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def input_oscillation(t: np.ndarray, u: np.ndarray, window: float = 0.1, rel: float = 0.2,
                      floor: float = 1e-3) -> tuple[int, np.ndarray]:
    """Count sign reversals of large input jumps that follow each other within ``window``.

    A step jump is large when ``|du| >= max(floor, rel * max|u|)`` with the max
    taken over the surrounding ``window``, so a Lipschitz input moving with a
    smooth state never qualifies while on/off toggling always does. Returns the
    count and the times of the reversals.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.size < 3:
        return 0, np.zeros(0)
    du = np.diff(u)
    w = max(1, int(round(window / (t[1] - t[0]))))
    padded = np.pad(np.abs(u), (w, w), mode="edge")
    local = np.lib.stride_tricks.sliding_window_view(padded, 2 * w + 1).max(axis=1)[:-1]
    big = np.flatnonzero(np.abs(du) >= np.maximum(floor, rel * local))
    if big.size < 2:
        return 0, np.zeros(0)
    s = np.sign(du[big])
    tb = t[big + 1]
    hit = (s[1:] != s[:-1]) & (np.diff(tb) <= window)
    return int(hit.sum()), tb[1:][hit]


def write_trajectory_csv(traj: Trajectory, path: str | Path, stride: int = 1) -> Path:
    """CSV with columns ``t, lambda_*, omega_*, u_*, V`` at 17 significant digits."""
    path = Path(path)
    stride = max(1, int(stride))
    idx = np.arange(0, len(traj.t), stride)
    if idx[-1] != len(traj.t) - 1:
        idx = np.append(idx, len(traj.t) - 1)
    header = (["t"] + [f"lambda_{j + 1}" for j in range(traj.lam.shape[1])]
              + [f"omega_{b}" for b in traj.network.bus_ids]
              + [f"u_{b}" for b in traj.controlled_ids] + ["V"])
    data = np.column_stack([traj.t[idx], traj.lam[idx], traj.omega[idx], traj.u[idx], traj.V[idx]])
    with path.open("w", newline="") as fh:
        fh.write("# units: t [s], lambda [rad], omega [rad/s], u [p.u.], V [p.u.]\n")
        fh.write(f"# scenario: {traj.name or 'unnamed'}; controller: {traj.mode.label()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow(["%.17g" % v for v in row])
    return path


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


def _mode_from(raw: Any, net: PowerNetwork, t_end: float, seed: int) -> ControllerMode:
    if isinstance(raw, str):
        if raw not in ("off", "on", "discontinuous"):
            raise ParseError(f"controller_mode {raw!r} needs parameters or is unknown")
        return ControllerMode(raw)
    if not isinstance(raw, Mapping) or len(raw) != 1:
        raise ParseError(f"bad controller_mode {raw!r}")
    (kind, body), = raw.items()
    if kind == "delayed":
        return ControllerMode.delayed(float(body["t_on"] if isinstance(body, Mapping) else body))
    if kind == "robust":
        unc = {}
        for rb in body["bounds"]:
            unc[int(rb["id"])] = UncertaintyBounds(
                float(rb.get("eps_omega", 0.0)), float(rb.get("eps_lambda", 0.0)),
                float(rb.get("eps_p", 0.0)), float(rb.get("eps_E", 0.0)),
                None if rb.get("E_hat") is None else float(rb["E_hat"]))
        sig = body.get("signal", {"kind": "seeded_uniform"})
        if sig["kind"] == "sinusoid":
            kind_obj: Any = Sinusoid(float(sig["freq"]), float(sig.get("amp_omega", 0.0)),
                                     float(sig.get("amp_lambda", 0.0)), float(sig.get("amp_p", 0.0)))
        elif sig["kind"] == "seeded_uniform":
            kind_obj = SeededUniform(float(sig.get("hold", 0.01)), float(sig.get("scale", 1.0)),
                                     max(t_end, 1.0) + 1.0)
        else:
            raise ParseError(f"unknown signal kind {sig['kind']!r}")
        E_true = {b: float(net.E[net.index_of(b)]) for b in unc}
        return ControllerMode.robust(make_measurement_errors(unc, kind_obj, seed, E_true))
    raise ParseError(f"unknown controller_mode {kind!r}")


def scenario_from_dict(raw: Mapping[str, Any], net: PowerNetwork) -> Scenario:
    """Scenario JSON: ``t_end``, ``dt``, ``initial_state``, ``injection_schedule``,
    ``controller_mode``, ``seed``, ``gamma`` (all rad/s and p.u.)."""
    try:
        t_end = float(raw["t_end"])
        seed = int(raw.get("seed", 0))
        init = raw.get("initial_state", "equilibrium")
        if isinstance(init, Mapping):
            omega = np.asarray(init["omega"], dtype=float)
            if "theta" in init:
                init = SystemState.from_theta(net, init["theta"], omega)
            else:
                init = SystemState(np.asarray(init["lambda"], dtype=float), omega)
        sched = {int(b): [ScheduleSegment.from_dict(s) for s in segs]
                 for b, segs in raw.get("injection_schedule", {}).items()}
        gamma = {}
        for b, g in raw.get("gamma", {}).items():
            gamma[int(b)] = math.inf if str(g).lower() in ("inf", "infinity") else float(g)
        mode = _mode_from(raw.get("controller_mode", "on"), net, t_end, seed)
        return Scenario(net, t_end, float(raw.get("dt", 1e-3)), init, sched, mode, seed, gamma,
                        float(raw.get("omega_guard", 1e3)), name=str(raw.get("name", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed scenario: {exc!r}") from exc


def with_mode(scenario: Scenario, mode: ControllerMode, name: str | None = None) -> Scenario:
    return replace(scenario, controller_mode=mode, name=scenario.name if name is None else name)
