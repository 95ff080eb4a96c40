"""Small seeded networks and scenarios shared by the tests."""

from __future__ import annotations

import math

import numpy as np

from freqguard.controller import ClassK, ControlledBusSpec
from freqguard.energy import EnergyContext, energy_V
from freqguard.equilibrium import solve_equilibrium
from freqguard.network import Bus, PowerNetwork, ScheduleSegment, TransmissionLine
from freqguard.simulator import ControllerMode, Scenario
from freqguard.state import SystemState


def spec(bus: int, hi: float = 0.5, th: float = 0.2, gamma: float = 1.0, lo: float | None = None,
         lo_th: float | None = None) -> ControlledBusSpec:
    k = ClassK.linear(gamma)
    return ControlledBusSpec(bus, -hi if lo is None else lo, hi, -th if lo_th is None else lo_th,
                             th, k, k)


def two_bus(p: float = 0.5, b: float = 1.0, M=(1.0, 1.0), E=(1.0, 1.0), controllers=()) -> PowerNetwork:
    buses = (Bus(1, M[0], E[0], p), Bus(2, M[1], E[1], -p))
    return PowerNetwork(buses, (TransmissionLine.oriented(1, 2, b),), tuple(controllers), "two")


def triangle(b=(1.0, 2.0, 3.0), p=(0.3, -0.1, -0.2), controllers=()) -> PowerNetwork:
    buses = tuple(Bus(i + 1, 1.0, 1.0, p[i]) for i in range(3))
    lines = (TransmissionLine.oriented(1, 2, b[0]), TransmissionLine.oriented(2, 3, b[1]),
             TransmissionLine.oriented(1, 3, b[2]))
    return PowerNetwork(buses, lines, tuple(controllers), "triangle")


def random_network(seed: int, n: int | None = None, max_lines: int | None = None,
                   controlled: int = 1, p_scale: float = 0.3, band=(0.5, 0.2)) -> PowerNetwork:
    """Connected random network: a random tree plus a few chords."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 6))
    order = rng.permutation(n) + 1
    edges = set()
    for k in range(1, n):
        a, c = int(order[k]), int(order[rng.integers(0, k)])
        edges.add((min(a, c), max(a, c)))
    cap = max_lines if max_lines is not None else n + 1
    for _ in range(4 * n):
        if len(edges) >= cap:
            break
        a, c = (int(x) for x in rng.choice(n, 2, replace=False) + 1)
        edges.add((min(a, c), max(a, c)))
    p = rng.uniform(-p_scale, p_scale, n)
    p -= p.mean()
    buses = tuple(Bus(i + 1, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 1.5)), float(p[i]))
                  for i in range(n))
    lines = tuple(TransmissionLine.oriented(a, c, float(rng.uniform(1.5, 3.0))) for a, c in sorted(edges))
    ctrl = tuple(spec(int(i) + 1, *band) for i in rng.choice(n, controlled, replace=False))
    return PowerNetwork(buses, lines, ctrl, f"random{seed}")


def state_in_phi(net: PowerNetwork, seed: int, fill: float = 0.6, beta: float = 1.01,
                 push: float | None = None) -> SystemState:
    """Seeded admissible state with V = fill * c / beta.

    ``push`` places every controlled frequency at that value before scaling
    the rest of the perturbation, so the controller starts near its band edge.
    """
    rng = np.random.default_rng(seed)
    eq = solve_equilibrium(net)
    ctx = EnergyContext.build(net, eq, beta)
    th = rng.normal(0.0, 1.0, net.n)
    dw = rng.normal(0.0, 1.0, net.n)
    fixed = np.zeros(net.n, dtype=bool)
    if push is not None:
        for c in net.controllers:
            k = net.index_of(c.bus_id)
            dw[k] = push - eq.omega_inf
            fixed[k] = True
    base = SystemState(eq.lambda_inf, np.where(fixed, eq.omega_inf + dw, eq.omega_inf))
    v0 = energy_V(net, eq, base)
    target = fill * ctx.phi_level
    if v0 >= target:
        raise ValueError("pushed state already exceeds the requested level")
    lo, hi = 0.0, 1.0
    while True:
        st = _perturbed(net, eq, th, dw, fixed, hi)
        if max(np.abs(st.lam)) >= math.pi / 2 or energy_V(net, eq, st) > target:
            break
        hi *= 2
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        st = _perturbed(net, eq, th, dw, fixed, mid)
        if max(np.abs(st.lam)) < math.pi / 2 and energy_V(net, eq, st) <= target:
            lo = mid
        else:
            hi = mid
    return _perturbed(net, eq, th, dw, fixed, lo)


def _perturbed(net, eq, th, dw, fixed, s) -> SystemState:
    lam = eq.lambda_inf + s * (net.D @ th)
    om = eq.omega_inf + np.where(fixed, dw, s * dw)
    return SystemState(lam, om)


def balanced_step(net: PowerNetwork, bus: int, delta: float, window=(0.0, 3.0)) -> dict:
    """Raise ``bus`` by ``delta`` and lower another bus by the same amount on ``window``."""
    other = next(b.id for b in net.buses if b.id != bus)
    base = {b.id: b.power_p for b in net.buses}
    return {bus: [ScheduleSegment(window[0], window[1], "constant", value=base[bus] + delta)],
            other: [ScheduleSegment(window[0], window[1], "constant", value=base[other] - delta)]}


def energy_scenarios(count: int = 20, t_end: float = 10.0, dt: float = 1e-3) -> list[Scenario]:
    """Seeded scenarios starting in Phi with the controller on; odd seeds add a p window."""
    out = []
    for s in range(count):
        net = random_network(100 + s)
        hi_th = net.controllers[0].omega_hi_th
        x0 = state_in_phi(net, s, fill=0.6, push=hi_th + 0.2)
        sched = {}
        if s % 2:
            sched = balanced_step(net, net.controllers[0].bus_id, 0.6)
        out.append(Scenario(net, t_end, dt, x0, sched, ControllerMode.on(), s, name=f"energy{s}"))
    return out


def uniform_shift(net: PowerNetwork, a: float, window) -> dict:
    """Raise every injection by ``a * E_k``: omega_inf moves by ``a``, equilibrium angles stay put."""
    return {b.id: [ScheduleSegment(window[0], window[1], "constant", value=b.power_p + a * b.damping_E)]
            for b in net.buses}


def wide_two_bus(**kw) -> PowerNetwork:
    return two_bus(0.5, controllers=[spec(1, 0.6, 0.3, 1.0)], **kw)


# grid settings for instances where every frequency is a free variable
STRONG_GRID = dict(others=True, rounds=12, keep=20, points=201)

# small effort-bound instances: (network factory, bus or None for the controlled one, eta, grid kwargs)
EFFORT_INSTANCES = [
    (wide_two_bus, 1, 0.2, STRONG_GRID),
    (lambda: wide_two_bus(E=(0.1, 0.1)), 1, 0.25, STRONG_GRID),
    (lambda: triangle(controllers=[spec(1, 0.5, 0.1)]), 1, 0.3, {}),
    (lambda: triangle(p=(0.6, -0.4, -0.2), controllers=[spec(1, 0.5, 0.1, 2.0)]), 1, 0.3, {}),
    (lambda: random_network(7, n=3, p_scale=0.6, band=(0.5, 0.1)), None, 0.4, {}),
]
