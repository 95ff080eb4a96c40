"""Preset scenarios on the bundled 39-bus dataset (or any compatible network)."""

from __future__ import annotations

import math
from typing import Any
from dataclasses import dataclass

import numpy as np

from .controller import UncertaintyBounds
from .errors import ValidationError
from .network import TWO_PI, PowerNetwork, ScheduleSegment
from .simulator import ControllerMode, Scenario, Sinusoid, make_measurement_errors
from .state import SystemState

PRESETS = ("outage_g9", "sinusoid_30pct", "delayed_12s", "gamma_sweep", "noisy_measurement",
           "bound_sweep_100")

# The sinusoidal disturbance (1 + 0.3 sin(pi t / 30)) p_i(0) on t < 30 s.
SIN_AMPLITUDE = 0.3
SIN_PERIOD = 60.0
SIN_WINDOW = (0.0, 30.0)
OUTAGE_BUS = 38
OUTAGE_WINDOW = (10.0, 40.0)
GAMMA_SWEEP = (0.1, 2.0, 10.0, math.inf)
NOISE_FREQ_HZ = 100.0
NOISE_AMP = 0.001 * TWO_PI


@dataclass(frozen=True)
class PresetRun:
    label: str
    scenario: Scenario


def sinusoid_schedule(net: PowerNetwork, t_end: float) -> dict[int, list[ScheduleSegment]]:
    """Perturb every non-generator bus with a nonzero injection."""
    stop = min(SIN_WINDOW[1], t_end)
    out = {}
    for bus in net.buses:
        if not bus.generator and bus.power_p != 0.0:
            out[bus.id] = [ScheduleSegment(SIN_WINDOW[0], stop, "sinusoid",
                                           amplitude_frac=SIN_AMPLITUDE, period=SIN_PERIOD)]
    if not out:
        # networks without a generator flag: perturb every bus
        out = {bus.id: [ScheduleSegment(SIN_WINDOW[0], stop, "sinusoid",
                                        amplitude_frac=SIN_AMPLITUDE, period=SIN_PERIOD)]
               for bus in net.buses if bus.power_p != 0.0}
    return out


def outage_schedule(net: PowerNetwork, t_end: float, bus_id: int = OUTAGE_BUS) -> dict[int, list[ScheduleSegment]]:
    if bus_id not in net.bus_ids:
        raise ValidationError(f"outage preset needs bus {bus_id}")
    start, stop = OUTAGE_WINDOW
    if start >= t_end:
        raise ValidationError("t_end ends before the outage window")
    return {bus_id: [ScheduleSegment(start, min(stop, t_end), "constant", value=0.0)]}


def noise_errors(net: PowerNetwork, bus_id: int):
    """100 Hz sinusoidal error on the frequency measured at ``bus_id`` only."""
    ctrl = sorted(net.controlled_set)
    unc = {b: UncertaintyBounds(eps_omega=NOISE_AMP if b == bus_id else 0.0) for b in ctrl}
    E_true = {b: float(net.E[net.index_of(b)]) for b in ctrl}
    return make_measurement_errors(unc, Sinusoid(NOISE_FREQ_HZ, NOISE_AMP, buses=(bus_id,)), 0, E_true)


def build_preset(name: str, net: PowerNetwork, *, t_end: float | None = None, dt: float = 1e-3,
                 gammas: tuple[float, ...] | None = None, seed: int = 0,
                 gamma_bus: int | None = None) -> list[PresetRun]:
    """Scenarios making up a preset; ``bound_sweep_100`` is handled by the bounds pipeline."""
    ctrl = sorted(net.controlled_set)
    if not ctrl:
        raise ValidationError("presets need at least one controlled bus")
    gbus = gamma_bus if gamma_bus is not None else (30 if 30 in ctrl else ctrl[0])
    if name == "outage_g9":
        T = 60.0 if t_end is None else t_end
        sched = outage_schedule(net, T)
        return [PresetRun(lbl, Scenario(net, T, dt, "equilibrium", sched, mode, seed, name=f"outage_g9_{lbl}"))
                for lbl, mode in (("off", ControllerMode.off()), ("on", ControllerMode.on()))]
    if name == "sinusoid_30pct":
        T = 60.0 if t_end is None else t_end
        sched = sinusoid_schedule(net, T)
        return [PresetRun(lbl, Scenario(net, T, dt, "equilibrium", sched, mode, seed,
                                        name=f"sinusoid_30pct_{lbl}"))
                for lbl, mode in (("off", ControllerMode.off()), ("on", ControllerMode.on()))]
    if name == "delayed_12s":
        T = 60.0 if t_end is None else t_end
        sched = sinusoid_schedule(net, T)
        return [PresetRun("delayed", Scenario(net, T, dt, "equilibrium", sched,
                                              ControllerMode.delayed(12.0), seed,
                                              name="delayed_12s"))]
    if name == "gamma_sweep":
        T = 30.0 if t_end is None else t_end
        sched = sinusoid_schedule(net, T)
        runs = []
        for g in gammas or GAMMA_SWEEP:
            lbl = "inf" if math.isinf(g) else f"{g:g}"
            runs.append(PresetRun(f"gamma_{lbl}", Scenario(net, T, dt, "equilibrium", sched,
                                                           ControllerMode.on(), seed, {gbus: g},
                                                           name=f"gamma_sweep_{lbl}")))
        return runs
    if name == "noisy_measurement":
        T = 30.0 if t_end is None else t_end
        sched = sinusoid_schedule(net, T)
        errs = noise_errors(net, gbus)
        runs = []
        for g in gammas or (2.0, math.inf):
            lbl = "inf" if math.isinf(g) else f"{g:g}"
            runs.append(PresetRun(f"gamma_{lbl}", Scenario(net, T, dt, "equilibrium", sched,
                                                           ControllerMode.robust(errs), seed,
                                                           {gbus: g}, name=f"noisy_measurement_{lbl}")))
        return runs
    if name == "bound_sweep_100":
        raise ValidationError("bound_sweep_100 is run through the bound pipeline")
    raise ValidationError(f"unknown preset {name!r}; choose from {PRESETS}")



@dataclass
class BoundSweepResult:
    report: Any
    min_u: np.ndarray  # per trajectory
    lam0: np.ndarray
    omega0: np.ndarray
    t_end: float

    @property
    def worst_gap(self) -> float:
        """Smallest ``min_t u(t) - u_min`` over the trajectories."""
        return float(np.min(self.min_u) - self.report.u_min)

    def passes(self, tol: float = 1e-6) -> bool:
        return self.worst_gap >= -tol


def run_bound_sweep(net: PowerNetwork, bus: int = 30, eta: float = 0.5, count: int = 100,
                    seed: int = 0, t_end: float = 10.0, dt: float = 1e-3, beta: float = 1.01,
                    spread: float = 0.1) -> BoundSweepResult:
    """Effort bound at ``bus`` plus a batch of trajectories started in the level set.

    Injections are held at their ``t = 0`` values and every controller is on.
    """
    from .bounds.effort import EffortBoundProblem, effort_report, sample_level_set
    from .energy import EnergyContext
    from .equilibrium import solve_equilibrium
    from .simulator import simulate_batch

    const = net.with_schedules({b.id: () for b in net.buses if b.schedule})
    eq = solve_equilibrium(const, 0.0)
    ctx = EnergyContext.build(const, eq, beta)
    prob = EffortBoundProblem.build(const, eq, ctx, bus, eta)
    rep = effort_report(prob, const, eq, ctx)
    if rep.argmin_state is None:
        center = SystemState(eq.lambda_inf, np.full(const.n, eq.omega_inf))
    else:
        center = rep.argmin_state
    lam0, om0 = sample_level_set(const, eq, eta, center, count, seed, spread)
    res = simulate_batch(const, lam0, om0, t_end, dt, ControllerMode.on())
    k = res.controlled_ids.index(bus)
    return BoundSweepResult(rep, res.u[:, :, k].min(axis=0), lam0, om0, t_end)
