import dataclasses
import math

import numpy as np
import pytest
from scipy.special import lambertw

from freqguard.bounds import (EffortBoundProblem, SolverSettings, effort_report, entry_time_estimate,
                              envelope_z, exponential_bound, find_min_delta, in_H_minus, in_H_plus,
                              in_M_minus, in_M_plus, robust_delta_check, solve_Q, solve_R_lower,
                              solve_R_upper, u_max, u_min)
from freqguard.controller import ClassK, UncertaintyBounds
from freqguard.energy import EnergyContext
from freqguard.equilibrium import solve_equilibrium
from freqguard.errors import DegreeError, DomainError, InfeasibleError, NotReachedError
from freqguard.network import bundled_network_path, load_network

from netgen import EFFORT_INSTANCES, spec, triangle, wide_two_bus
from oracles import grid_Q

TWO_PI = 2 * math.pi


# ---------------------------------------------------------------------------
# envelope
# ---------------------------------------------------------------------------

UNIT = spec(1, hi=2.0, th=1.0, gamma=1.0)


def lambert_gap(t, y0=1.0, a=1.0, gamma=1.0, M=1.0):
    """Closed-form gap z - hi from y + a ln y = y0 + a ln y0 - gamma t / M."""
    arg = (y0 / a) * math.exp((y0 - gamma * t / M) / a)
    return a * float(lambertw(arg).real)


class TestEnvelope:
    def test_unit_example_against_lambert(self):
        env = envelope_z(UNIT, 1.0, 3.0, t_end=5.0, dt=1e-3)
        assert env.z[0] == 3.0
        for t in (0.5, 1.0, 2.0, 5.0):
            k = int(round(t / 1e-3))
            assert env.z[k] == pytest.approx(2.0 + lambert_gap(t), abs=1e-9)
        # omega constant: W(1)
        assert env.z[1000] == pytest.approx(2.5671432904097838, abs=1e-9)

    def test_implicit_residual_and_monotone(self):
        env = envelope_z(UNIT, 1.0, 3.0, t_end=10.0, dt=1e-3)
        assert np.max(env.implicit_residuals) <= 1e-6
        assert np.all(np.diff(env.z) < 0) and np.all(env.z > 2.0)

    @pytest.mark.parametrize("gamma,M,z0", [(1.0, 1.0, 3.0), (0.5, 2.0, 2.2), (4.0, 0.3, 6.0)])
    def test_exponential_bound_dominates(self, gamma, M, z0):
        s = spec(1, hi=2.0, th=1.0, gamma=gamma)
        env = envelope_z(s, M, z0, t_end=10.0, dt=1e-3)
        assert np.all(env.exponential_bound(env.t) >= env.z - 1e-12)
        assert np.array_equal(env.exponential_bound(env.t),
                              exponential_bound(2.0, 1.0, z0, gamma, M, env.t))

    def test_nonlinear_kappa(self):
        s = dataclasses.replace(UNIT, kappa_upper=ClassK.from_table(
            [(-5.0, -12.0), (-1.0, -1.0), (0.0, 0.0), (0.5, 0.2), (1.0, 1.0), (5.0, 12.0)]))
        env = envelope_z(s, 1.0, 3.0, t_end=3.0)
        assert env.implicit_residuals is None
        assert np.all(np.diff(env.z) < 0)

    def test_domain(self):
        with pytest.raises(DomainError):
            envelope_z(UNIT, 1.0, 1.5)
        with pytest.raises(DomainError):
            entry_time_estimate(UNIT, 1.0, 2.0)


class TestEntryTime:
    def test_no_shrink_never_reaches(self):
        with pytest.raises(NotReachedError):
            entry_time_estimate(UNIT, 1.0, 3.0)

    def test_shrunk_closed_form(self):
        s = dataclasses.replace(UNIT, epsilon_shrink=0.5)
        t1 = entry_time_estimate(s, 1.0, 3.0)
        # gap from 1.5 to 0.5 with a = 0.5: t = 1 + 0.5 ln 3
        assert t1 == pytest.approx(1.0 + 0.5 * math.log(3.0), abs=1e-6)
        env = envelope_z(s, 1.0, 3.0, t_end=t1, dt=t1 / 20000)
        assert env.z[-1] == pytest.approx(2.0, abs=1e-6)

    def test_larger_gamma_enters_sooner(self):
        times = [entry_time_estimate(dataclasses.replace(spec(1, 2.0, 1.0, g), epsilon_shrink=0.5), 1.0, 3.0)
                 for g in (0.5, 1.0, 2.0, 4.0)]
        assert all(a > b for a, b in zip(times, times[1:]))


# ---------------------------------------------------------------------------
# effort bounds
# ---------------------------------------------------------------------------


class TestMembership:
    def test_h_plus(self):
        assert in_H_plus(0.3, 0.3)
        assert not in_H_plus(0.3, 0.29)
        assert in_H_plus(-0.3, math.sin(-0.3))
        assert not in_H_plus(1.6, 5.0)

    def test_h_minus(self):
        assert in_H_minus(-0.3, -0.3)
        assert in_H_minus(0.3, math.sin(0.3))
        assert not in_H_minus(0.3, 0.3)

    def test_m_pieces(self):
        assert in_M_plus(1, 0.3, 0.6 / math.pi)
        assert not in_M_plus(1, 0.3, 0.5 / math.pi)
        assert in_M_plus(0, -0.3, math.sin(-0.3))
        assert not in_M_plus(0, 0.3, 1.0)
        assert in_M_minus(0, -0.3, -0.6 / math.pi)
        assert in_M_minus(1, 0.3, math.sin(0.3))
        assert not in_M_minus(1, 0.3, 0.3)

    def test_pieces_cover_inner_sets(self):
        rng = np.random.default_rng(0)
        for a, b in zip(rng.uniform(-1.5, 1.5, 400), rng.uniform(-1.2, 1.2, 400)):
            if in_H_plus(a, b):
                assert math.sin(a) <= b + 1e-12
                assert in_M_plus(0, a, b) or in_M_plus(1, a, b)
            if in_H_minus(a, b):
                assert math.sin(a) >= b - 1e-12
                assert in_M_minus(0, a, b) or in_M_minus(1, a, b)


def setup(net, bus, eta, settings=None):
    eq = solve_equilibrium(net)
    ctx = EnergyContext.build(net, eq)
    return EffortBoundProblem.build(net, eq, ctx, bus, eta, settings), eq, ctx


@pytest.mark.parametrize("k", range(len(EFFORT_INSTANCES)))
def test_sandwich_and_grid_oracle(k):
    make, bus, eta, grid_kw = EFFORT_INSTANCES[k]
    net = make()
    s = net.controllers[0]
    bus = s.bus_id if bus is None else bus
    prob, eq, ctx = setup(net, bus, eta)
    rep = effort_report(prob, net, eq, ctx)
    assert rep.lower <= rep.g_star + 1e-6
    assert rep.g_star <= rep.upper + 1e-6
    ref = grid_Q(net, eq.lambda_inf, eq.omega_inf, bus, s.gamma, s.omega_hi, s.omega_hi_th, eta, **grid_kw)
    assert rep.g_star == pytest.approx(ref, abs=1e-3)


class TestEffort:
    def test_frozen_values(self):
        prob, eq, ctx = setup(wide_two_bus(), 1, 0.2)
        assert solve_Q(prob, wide_two_bus(), eq, ctx)[0] == pytest.approx(0.404385, abs=1e-5)
        net = triangle(controllers=[spec(1, 0.5, 0.1)])
        prob, eq, ctx = setup(net, 1, 0.3)
        rep = effort_report(prob, net, eq, ctx)
        assert rep.u_min == pytest.approx(-0.678015, abs=1e-5)
        assert rep.upper - rep.lower <= 1e-5

    def test_degree_two_enumerates_four(self):
        net = triangle(controllers=[spec(1, 0.5, 0.1)])
        prob, eq, ctx = setup(net, 1, 0.3)
        res = solve_R_lower(prob, net, eq, ctx, _with_solution=True)
        assert res.solves == 4
        assert len(prob.incident) == 2

    def test_degree_cap(self):
        net = triangle(controllers=[spec(1, 0.5, 0.1)])
        prob, eq, ctx = setup(net, 1, 0.3, SolverSettings(max_degree=1))
        with pytest.raises(DegreeError):
            solve_R_lower(prob, net, eq, ctx)

    def test_level_below_threshold_energy(self):
        net = wide_two_bus()
        prob, eq, ctx = setup(net, 1, 0.04)
        assert prob.d_i == pytest.approx(0.045)
        with pytest.raises(InfeasibleError):
            solve_Q(prob, net, eq, ctx)
        with pytest.raises(InfeasibleError):
            solve_R_upper(prob, net, eq, ctx)
        assert u_min(prob, net, eq, ctx) == 0.0

    def test_u_min_nonpositive(self):
        net = wide_two_bus()
        prob, eq, ctx = setup(net, 1, 0.2)
        # the minimizer's g is positive here, so the input bound is zero
        assert u_min(prob, net, eq, ctx) == 0.0

    def test_u_max_mirrors_u_min_on_symmetric_network(self):
        net = triangle(p=(0.0, 0.0, 0.0), controllers=[spec(1, 0.5, 0.1)])
        prob, eq, ctx = setup(net, 1, 0.3)
        lo = effort_report(prob, net, eq, ctx)
        hi = u_max(net, eq, ctx, 1, 0.3)
        assert hi.side == "upper"
        assert hi.u_min == pytest.approx(-lo.u_min, abs=1e-6)
        assert hi.lower <= hi.g_star + 1e-6 <= hi.upper + 2e-6

    def test_u_max_grid_oracle(self):
        net = triangle(p=(0.6, -0.4, -0.2), controllers=[spec(1, 0.5, 0.1, 2.0)])
        prob, eq, ctx = setup(net, 1, 0.3)
        hi = u_max(net, eq, ctx, 1, 0.3)
        # mirrored instance: negated injections and band
        mirror = triangle(p=(-0.6, 0.4, 0.2), controllers=[spec(1, 0.5, 0.1, 2.0)])
        meq = solve_equilibrium(mirror)
        ref = grid_Q(mirror, meq.lambda_inf, meq.omega_inf, 1, 2.0, 0.5, 0.1, 0.3)
        assert hi.g_star == pytest.approx(-ref, abs=1e-3)


@pytest.mark.slow
def test_ieee39_bus30_relaxations_agree():
    net = load_network(bundled_network_path("ieee39"))
    prob, eq, ctx = setup(net, 30, 0.5)
    rep = effort_report(prob, net, eq, ctx)
    assert abs(rep.upper - rep.lower) <= 1e-3
    assert rep.g_star == pytest.approx(-5.78965, abs=1e-4)


# ---------------------------------------------------------------------------
# robustness margin
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bus30():
    net = load_network(bundled_network_path("ieee39"))
    k = net.index_of(30)
    E = float(net.E[k])
    p = float(net.p_at(0.0)[k])
    E_hat = 2.0 / TWO_PI
    unc = UncertaintyBounds(0.001 * TWO_PI, 0.0, 0.1 * abs(p), abs(E_hat - E), E_hat)
    return net.controller_for(30), unc, E


class TestRobust:
    def test_zero_uncertainty_any_positive_delta(self):
        s = spec(1, 0.5, 0.2, 1.0)
        assert robust_delta_check(s, UncertaintyBounds(), 1e-6, E_true=1.0)
        assert not robust_delta_check(s, UncertaintyBounds(), 0.0, E_true=1.0)
        assert find_min_delta(s, UncertaintyBounds(), E_true=1.0) <= 1e-5

    @pytest.mark.parametrize("worst_case", [False, True])
    def test_ieee39_reference(self, bus30, worst_case):
        s, unc, E = bus30
        assert robust_delta_check(s, unc, 0.1 * TWO_PI, E_true=E, worst_case=worst_case)

    def test_min_delta_values(self, bus30):
        s, unc, E = bus30
        assert find_min_delta(s, unc, E_true=E) == pytest.approx(0.1937, abs=1e-3)
        assert find_min_delta(s, unc, E_true=E, worst_case=True) == pytest.approx(0.2050, abs=1e-3)

    def test_huge_power_error_fails(self, bus30):
        s, unc, E = bus30
        big = dataclasses.replace(unc, eps_p=100.0)
        assert not robust_delta_check(s, big, 0.1 * TWO_PI, E_true=E)
        assert find_min_delta(s, big, E_true=E) is None

    @pytest.mark.parametrize("worst_case", [False, True])
    def test_min_delta_is_tight(self, bus30, worst_case):
        s, unc, E = bus30
        d = find_min_delta(s, unc, E_true=E, worst_case=worst_case)
        assert robust_delta_check(s, unc, d, E_true=E, worst_case=worst_case)
        assert d - 1e-4 <= 0 or not robust_delta_check(s, unc, d - 1e-4, E_true=E, worst_case=worst_case)

    def test_worst_case_is_stricter(self, bus30):
        s, unc, E = bus30
        for d in np.linspace(0.01, 0.6, 60):
            if robust_delta_check(s, unc, d, E_true=E, worst_case=True):
                assert robust_delta_check(s, unc, d, E_true=E)

    def test_discontinuous_law(self):
        s = spec(1, 0.5, 0.2).with_gamma(math.inf)
        assert robust_delta_check(s, UncertaintyBounds(0.01, 0.0, 0.1, 0.0), 0.02, E_true=1.0)
