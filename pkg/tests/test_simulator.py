import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freqguard.controller import UncertaintyBounds
from freqguard.energy import EnergyContext, in_phi
from freqguard.equilibrium import solve_equilibrium
from freqguard.errors import BlowupError, BoundError, ParseError, ValidationError
from freqguard.network import ScheduleSegment
from freqguard.simulator import (ControllerMode, Scenario, SeededUniform, Sinusoid,
                                 closed_loop_rhs, input_oscillation, integrate,
                                 make_measurement_errors, monitor_report, scenario_from_dict,
                                 simulate_batch, write_trajectory_csv)
from freqguard.state import SystemState

from netgen import balanced_step, random_network, spec, state_in_phi, two_bus


@pytest.fixture(scope="module")
def ctrl_net():
    return random_network(21, n=4, controlled=2)


class TestRHS:
    def test_equilibrium_fixed_point(self, ctrl_net):
        eq = solve_equilibrium(ctrl_net)
        s = SystemState(eq.lambda_inf, np.full(ctrl_net.n, eq.omega_inf))
        for mode in (ControllerMode.off(), ControllerMode.on()):
            d = closed_loop_rhs(ctrl_net, None, mode, s, 0.0)
            assert np.max(np.abs(np.concatenate([d.lam, d.omega]))) <= 1e-8

    def test_two_bus_substitution(self):
        net = two_bus(0.5)
        d = closed_loop_rhs(net, None, ControllerMode.off(), SystemState(np.zeros(1), np.zeros(2)), 0.0)
        assert d.omega.tolist() == [0.5, -0.5]
        assert d.lam.tolist() == [0.0]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_on_off_differ_only_on_controlled(self, seed):
        net = random_network(seed, controlled=2)
        rng = np.random.default_rng(seed)
        s = SystemState.from_theta(net, rng.normal(0, 0.4, net.n), rng.uniform(-0.7, 0.7, net.n))
        a = closed_loop_rhs(net, None, ControllerMode.off(), s, 0.0)
        b = closed_loop_rhs(net, None, ControllerMode.on(), s, 0.0)
        free = [k for k in range(net.n) if net.bus_ids[k] not in net.controlled_set]
        assert np.array_equal(a.lam, b.lam)
        assert np.array_equal(a.omega[free], b.omega[free])


class TestIntegrate:
    def test_fixed_point_preserved(self, ctrl_net):
        tr = integrate(Scenario(ctrl_net, 10.0, 1e-3))
        assert len(tr.t) == 10001
        assert np.max(np.abs(tr.omega - tr.omega[0])) <= 1e-6
        assert np.max(np.abs(tr.lam - tr.lam[0])) <= 1e-6
        rep = monitor_report(tr)
        assert rep.v_monotone and rep.invariant and rep.last_nonzero_u is None
        assert not any(rep.v_violations) and not any(rep.band_violations.values())

    def test_sample_count(self, ctrl_net):
        assert len(integrate(Scenario(ctrl_net, 0.2345, 0.01)).t) == 24

    def test_blowup_guard(self):
        net = two_bus(0.5)
        x0 = SystemState(np.zeros(1), np.array([5.0, -5.0]))
        with pytest.raises(BlowupError):
            integrate(Scenario(net, 1.0, 1e-3, x0, omega_guard=1.0))

    def test_inadmissible_start(self):
        net = random_network(2, n=4)
        if net.m == net.n - 1:
            pytest.skip("tree network has no cycle")
        bad = SystemState(np.full(net.m, 0.1), np.zeros(net.n))
        with pytest.raises(ValidationError):
            integrate(Scenario(net, 1.0, 1e-3, bad))

    def test_window_outside_horizon(self, ctrl_net):
        with pytest.raises(ValidationError):
            Scenario(ctrl_net, 5.0, injection_schedule={1: [ScheduleSegment(4.0, 6.0, "constant")]})

    def test_convergence_to_synchronous_frequency(self, ctrl_net):
        x0 = state_in_phi(ctrl_net, 3, fill=0.8)
        tr = integrate(Scenario(ctrl_net, 40.0, 2e-3, x0))
        eq = solve_equilibrium(ctrl_net)
        assert np.max(np.abs(tr.omega[-1] - eq.omega_inf)) <= 1e-3

    def test_rk4_order(self, ctrl_net):
        x0 = state_in_phi(ctrl_net, 5, fill=0.5)
        finals = []
        for h in (0.04, 0.02, 0.01):
            tr = integrate(Scenario(ctrl_net, 2.0, h, x0, controller_mode=ControllerMode.off()))
            finals.append(np.concatenate([tr.lam[-1], tr.omega[-1]]))
        d1 = np.max(np.abs(finals[0] - finals[1]))
        d2 = np.max(np.abs(finals[1] - finals[2]))
        assert 16 / 2 <= d1 / d2 <= 16 * 2

    def test_step_halving_with_controller(self, ctrl_net):
        x0 = state_in_phi(ctrl_net, 7, fill=0.6, push=0.4)
        a = integrate(Scenario(ctrl_net, 3.0, 2e-3, x0))
        b = integrate(Scenario(ctrl_net, 3.0, 1e-3, x0))
        assert np.max(np.abs(a.omega - b.omega[::2])) <= 1e-5

    def test_robust_with_zero_errors_matches_on(self, ctrl_net):
        x0 = state_in_phi(ctrl_net, 1, fill=0.6, push=0.4)
        unc = {b: UncertaintyBounds() for b in ctrl_net.controlled_set}
        errs = make_measurement_errors(unc, Sinusoid(100.0, 0.0), 0,
                                       {b: float(ctrl_net.E[ctrl_net.index_of(b)]) for b in unc})
        a = integrate(Scenario(ctrl_net, 2.0, 1e-3, x0))
        b = integrate(Scenario(ctrl_net, 2.0, 1e-3, x0, controller_mode=ControllerMode.robust(errs)))
        assert np.array_equal(a.omega, b.omega)
        assert np.array_equal(a.u, b.u)

    def test_delayed_activation(self, ctrl_net):
        x0 = state_in_phi(ctrl_net, 1, fill=0.6, push=0.4)
        tr = integrate(Scenario(ctrl_net, 2.0, 1e-3, x0, controller_mode=ControllerMode.delayed(0.5)))
        before = tr.t < 0.5
        assert np.all(tr.u[before] == 0.0)
        assert np.any(tr.u[~before] != 0.0)

    def test_batch_matches_single(self, ctrl_net):
        x0 = state_in_phi(ctrl_net, 2, fill=0.6, push=0.4)
        single = integrate(Scenario(ctrl_net, 1.0, 1e-3, x0))
        batch = simulate_batch(ctrl_net, x0.lam[None], x0.omega[None], 1.0, 1e-3)
        assert np.allclose(batch.u[:, 0, :], single.u, atol=1e-13)
        assert np.allclose(batch.final_omega[0], single.omega[-1], atol=1e-13)


class TestMonitors:
    def test_band_events_and_exit_time(self):
        # uncontrolled bus pushed straight through its band
        net = two_bus(0.0, controllers=[spec(1, 0.5, 0.2)])
        x0 = SystemState(np.zeros(1), np.array([0.45, 0.0]))
        sched = {1: [ScheduleSegment(0.0, 5.0, "constant", value=0.9)],
                 2: [ScheduleSegment(0.0, 5.0, "constant", value=-0.9)]}
        tr = integrate(Scenario(net, 5.0, 1e-3, x0, sched, ControllerMode.off()))
        rep = monitor_report(tr)
        assert not rep.invariant
        exits = [e for e in tr.events if e.kind == "exit"]
        assert exits
        k = int(np.argmax(tr.omega[:, 0] > 0.5))
        assert tr.t[k - 1] <= exits[0].t <= tr.t[k]
        # the same push with the controller on stays inside
        tr_on = integrate(Scenario(net, 5.0, 1e-3, x0, sched, ControllerMode.on()))
        assert monitor_report(tr_on).invariant
        assert tr_on.omega[:, 0].max() <= 0.5 + 1e-6

    def test_windowed_p_energy_keys(self):
        net = random_network(30, n=4)
        x0 = state_in_phi(net, 0, fill=0.5)
        sched = balanced_step(net, net.controllers[0].bus_id, 0.4, (1.0, 2.0))
        tr = integrate(Scenario(net, 3.0, 1e-3, x0, sched))
        # before, during and after the step
        assert len(np.unique(tr.eq_key)) == 3
        jumps = tr.t[1:][np.diff(tr.eq_key) != 0]
        assert jumps == pytest.approx([1.0, 2.0], abs=1.5e-3)
        rep = monitor_report(tr)
        assert rep.v_monotone


class TestErrors:
    def test_zero_amplitude(self):
        errs = make_measurement_errors({1: UncertaintyBounds()}, Sinusoid(100.0, 0.0), 0)
        assert np.all(errs._values(0.123) == 0.0)

    def test_sinusoid_formula(self):
        amp = 0.001 * 2 * math.pi
        errs = make_measurement_errors({30: UncertaintyBounds(eps_omega=amp)}, Sinusoid(100.0, amp), 0)
        for t in (0.0, 0.0013, 0.25, 7.77):
            assert errs.omega(t)[0] == pytest.approx(amp * math.sin(200 * math.pi * t), abs=1e-15)

    def test_seeded_uniform_deterministic(self):
        unc = {1: UncertaintyBounds(0.1, 0.2, 0.3), 2: UncertaintyBounds(0.05)}
        a = make_measurement_errors(unc, SeededUniform(), 7)
        b = make_measurement_errors(unc, SeededUniform(), 7)
        c = make_measurement_errors(unc, SeededUniform(), 8)
        ts = np.linspace(0, 10, 101)
        va = np.array([a._values(t) for t in ts])
        assert np.array_equal(va, np.array([b._values(t) for t in ts]))
        assert not np.array_equal(va, np.array([c._values(t) for t in ts]))
        assert np.all(np.abs(va[:, 0, 0]) <= 0.1) and np.all(np.abs(va[:, 2, 0]) <= 0.3)

    def test_amplitude_above_bound(self):
        with pytest.raises(BoundError):
            make_measurement_errors({1: UncertaintyBounds(eps_omega=0.001)}, Sinusoid(100.0, 0.01), 0)

    def test_E_hat_outside_bound(self):
        with pytest.raises(BoundError):
            make_measurement_errors({1: UncertaintyBounds(eps_E=0.1, E_hat=2.0)}, SeededUniform(), 0,
                                    {1: 1.0})


class TestOscillation:
    def test_toggling_counts(self):
        t = np.arange(0, 1, 1e-3)
        u = np.where(np.sin(2 * math.pi * 100 * t) > 0, 0.05, 0.0)
        count, times = input_oscillation(t, u)
        assert count > 10 and times[0] < 0.02

    def test_smooth_noise_does_not(self):
        t = np.arange(0, 1, 1e-3)
        u = 1.0 + 0.5 * t + 0.01 * np.sin(2 * math.pi * 100 * t)
        assert input_oscillation(t, u)[0] == 0


class TestIO:
    def test_csv_layout_and_determinism(self, ctrl_net, tmp_path):
        x0 = state_in_phi(ctrl_net, 4, fill=0.6, push=0.4)
        sc = Scenario(ctrl_net, 0.5, 1e-3, x0)
        p1 = write_trajectory_csv(integrate(sc), tmp_path / "a.csv", stride=10)
        p2 = write_trajectory_csv(integrate(sc), tmp_path / "b.csv", stride=10)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0].startswith("#") and "rad/s" in lines[0]
        header = next(l for l in lines if not l.startswith("#")).split(",")
        assert header[0] == "t" and header[-1] == "V"
        assert sum(h.startswith("lambda_") for h in header) == ctrl_net.m
        assert sum(h.startswith("omega_") for h in header) == ctrl_net.n
        assert sum(h.startswith("u_") for h in header) == 2
        rows = [l for l in lines if not l.startswith("#")][1:]
        assert len(rows) == 51
        tr = integrate(sc)
        first = rows[1].split(",")
        assert float(first[0]) == tr.t[10]
        assert float(first[1 + ctrl_net.m]) == tr.omega[10, 0]

    def test_scenario_from_dict(self, ctrl_net):
        b = next(iter(sorted(ctrl_net.controlled_set)))
        raw = {"t_end": 2.0, "dt": 0.01, "seed": 3, "name": "x",
               "injection_schedule": {str(b): [{"window": [0.5, 1.0], "kind": "constant", "value": 0.0}]},
               "controller_mode": {"robust": {"bounds": [{"id": c, "eps_omega": 0.01}
                                                         for c in ctrl_net.controlled_set],
                                              "signal": {"kind": "seeded_uniform"}}},
               "gamma": {str(b): "inf"}}
        sc = scenario_from_dict(json.loads(json.dumps(raw)), ctrl_net)
        assert sc.controller_mode.kind == "robust"
        assert sc.effective_network().controller_for(b).kappa_upper.is_infinite
        integrate(sc)

    def test_scenario_parse_errors(self, ctrl_net):
        with pytest.raises(ParseError):
            scenario_from_dict({"dt": 0.1}, ctrl_net)
        with pytest.raises(ParseError):
            scenario_from_dict({"t_end": 1, "controller_mode": "sometimes"}, ctrl_net)
