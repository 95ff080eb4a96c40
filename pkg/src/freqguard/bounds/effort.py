"""Worst-case control effort over an energy sublevel set.

For a controlled bus ``i`` and level ``eta`` the controller input is bounded
below by ``min(0, g*)`` where ``g*`` minimizes

    g(lambda, omega) = -gamma (w_i - hi) / (w_i - hi_th) + q_i(lambda, omega)

over ``{V <= eta, |lambda| <= pi/2, lambda = D theta, w_i > hi_th}``. That
problem is non-convex through ``sin(lambda)`` in ``q_i``. Replacing the sine
on each incident line by a convex inner approximation gives an upper bound
(``solve_R_upper``); splitting an outer approximation at ``lambda = 0`` into
convex pieces and enumerating the pieces gives a lower bound
(``solve_R_lower``).

Implementation notes:

* frequencies of the other buses only consume energy budget, so they are
  fixed at ``omega_inf`` and the variables are the reduced angles ``theta``
  (last bus pinned) and ``w_i``;
* the auxiliary ``z`` is eliminated: the objective is monotone in each
  ``z_j``, so at the optimum ``z_j`` sits on the boundary of its set;
* every subproblem is solved by SLSQP with analytic gradients.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from ..controller import ControlledBusSpec
from ..energy import EnergyContext, potential_a
from ..equilibrium import EquilibriumInfo, solve_equilibrium
from ..errors import DegreeError, InfeasibleError, ValidationError
from ..network import Bus, PowerNetwork
from ..state import SystemState

HALF_PI = 0.5 * math.pi
TWO_OVER_PI = 2.0 / math.pi


# ---------------------------------------------------------------------------
# Relaxation sets (membership helpers)
# ---------------------------------------------------------------------------


def in_H_plus(a: float, b: float, tol: float = 1e-12) -> bool:
    """Inner convex subset of ``{sin a <= b}``."""
    if not abs(a) < HALF_PI:
        return False
    return b >= (math.sin(a) if a < 0 else a) - tol


def in_H_minus(a: float, b: float, tol: float = 1e-12) -> bool:
    """Inner convex subset of ``{sin a >= b}``."""
    if not abs(a) < HALF_PI:
        return False
    return b <= (a if a < 0 else math.sin(a)) + tol


def in_M_plus(mu: int, a: float, b: float, tol: float = 1e-12) -> bool:
    """Convex pieces covering ``{sin a <= b}``: mu=0 for a <= 0, mu=1 for a >= 0."""
    if mu == 0:
        return -HALF_PI < a <= 0 and math.sin(a) <= b + tol
    return 0 <= a <= HALF_PI and TWO_OVER_PI * a <= b + tol


def in_M_minus(mu: int, a: float, b: float, tol: float = 1e-12) -> bool:
    """Convex pieces covering ``{sin a >= b}``: mu=0 for a <= 0, mu=1 for a >= 0."""
    if mu == 0:
        return -HALF_PI < a <= 0 and b <= TWO_OVER_PI * a + tol
    return 0 <= a <= HALF_PI and b <= math.sin(a) + tol


# z(lambda) on the active boundary, with derivative
_SIN = (np.sin, np.cos)
_CHORD = (lambda x: TWO_OVER_PI * x, lambda x: np.full_like(x, TWO_OVER_PI))


def _h_plus(x):
    return np.where(x < 0, np.sin(x), x)


def _dh_plus(x):
    return np.where(x < 0, np.cos(x), 1.0)


def _h_minus(x):
    return np.where(x < 0, x, np.sin(x))


def _dh_minus(x):
    return np.where(x < 0, 1.0, np.cos(x))


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverSettings:
    starts: int = 16
    seed: int = 0
    ftol: float = 1e-12
    maxiter: int = 1000
    seam_offset: float = 1e-9
    max_degree: int = 20


@dataclass(frozen=True)
class EffortBoundProblem:
    """Data of one effort-bound instance (bus id, level, threshold, incident line split)."""

    bus: int
    eta: float
    d_i: float
    D_plus: tuple[int, ...]
    D_minus: tuple[int, ...]
    settings: SolverSettings = field(default_factory=SolverSettings)

    @classmethod
    def build(cls, net: PowerNetwork, eq: EquilibriumInfo, ctx: EnergyContext, bus: int,
              eta: float, settings: SolverSettings | None = None,
              spec: ControlledBusSpec | None = None) -> "EffortBoundProblem":
        spec = spec or net.controller_for(bus)
        spec.gamma  # linear class-K required
        if not 0 <= eta < ctx.c_level:
            raise ValidationError(f"eta must lie in [0, c) = [0, {ctx.c_level:.6g})")
        k = net.index_of(bus)
        row = net.DtYb[k]
        d_i = 0.5 * net.M[k] * (spec.omega_hi_th - eq.omega_inf) ** 2
        plus = tuple(int(j) for j in np.flatnonzero(row > 0))
        minus = tuple(int(j) for j in np.flatnonzero(row < 0))
        return cls(bus, float(eta), float(d_i), plus, minus, settings or SolverSettings())

    @property
    def incident(self) -> tuple[int, ...]:
        return tuple(sorted(self.D_plus + self.D_minus))


@dataclass
class Solution:
    value: float
    theta: np.ndarray
    w: float
    success: bool
    message: str = ""


class _Model:
    """Reduced variables ``x = (theta[:-1], w_i)``."""

    def __init__(self, net: PowerNetwork, eq: EquilibriumInfo, spec: ControlledBusSpec,
                 prob: EffortBoundProblem):
        if spec.bus_id != prob.bus:
            raise ValidationError("spec and problem refer to different buses")
        self.net, self.eq, self.spec, self.prob = net, eq, spec, prob
        self.k = net.index_of(prob.bus)
        self.n = net.n
        self.Dr = np.asarray(net.D[:, :-1])
        self.b = np.asarray(net.b)
        self.lam_inf = np.asarray(eq.lambda_inf)
        self.sin_inf = np.sin(self.lam_inf)
        self.Mi = float(net.M[self.k])
        self.Ei = float(net.E[self.k])
        # injection the equilibrium was solved for
        self.pi = float(eq.p_tilde[self.k] + eq.omega_inf * net.E[self.k])
        self.c = np.asarray(net.DtYb[self.k])
        self.gamma = spec.gamma
        self.hi = spec.omega_hi
        self.th = spec.omega_hi_th
        self.w_min = self.th + prob.settings.seam_offset
        self.eta = prob.eta
        theta_inf = eq.theta if eq.theta is not None else np.linalg.lstsq(net.D, self.lam_inf, rcond=None)[0]
        self.theta_inf = np.asarray(theta_inf)[:-1] - np.asarray(theta_inf)[-1]
        self.nv = self.n

    # energy
    def V(self, x):
        lam = self.Dr @ x[:-1]
        return 0.5 * self.Mi * (x[-1] - self.eq.omega_inf) ** 2 + \
            float(np.sum(self.b * potential_a(lam, self.lam_inf)))

    def dV(self, x):
        lam = self.Dr @ x[:-1]
        g = np.empty_like(x)
        g[:-1] = self.Dr.T @ (self.b * (np.sin(lam) - self.sin_inf))
        g[-1] = self.Mi * (x[-1] - self.eq.omega_inf)
        return g

    def potential(self, th):
        return float(np.sum(self.b * potential_a(self.Dr @ th, self.lam_inf)))

    def dpotential(self, th):
        return self.Dr.T @ (self.b * (np.sin(self.Dr @ th) - self.sin_inf))

    # objective with per-edge z functions
    def barrier(self, w):
        return -self.gamma * (w - self.hi) / (w - self.th)

    def dbarrier(self, w):
        return -self.gamma * (self.hi - self.th) / (w - self.th) ** 2

    def objective(self, zf: dict[int, tuple[Callable, Callable]]):
        edges = np.array(sorted(zf), dtype=int)
        cs = self.c[edges]
        fns = [zf[j] for j in edges]
        Dr_e = self.Dr[edges]

        def f(x):
            lam = Dr_e @ x[:-1]
            flow = sum(c * float(fz(l)) for c, (fz, _), l in zip(cs, fns, lam))
            return self.barrier(x[-1]) + self.Ei * x[-1] + flow - self.pi

        def df(x):
            lam = Dr_e @ x[:-1]
            coef = np.array([c * float(dz(l)) for c, (_, dz), l in zip(cs, fns, lam)])
            g = np.empty_like(x)
            g[:-1] = Dr_e.T @ coef
            g[-1] = self.dbarrier(x[-1]) + self.Ei
            return g

        return f, df

    def g_true(self, x) -> float:
        f, _ = self.objective({j: _SIN for j in self.prob.incident})
        return f(x)

    # constraints
    def linear_constraints(self, signs: dict[int, int] | None = None, with_w: bool = True):
        m = self.Dr.shape[0]
        A = [np.hstack([-self.Dr, np.zeros((m, 1))]), np.hstack([self.Dr, np.zeros((m, 1))])]
        bvec = [np.full(m, HALF_PI), np.full(m, HALF_PI)]
        for j, s in (signs or {}).items():
            row = np.zeros(self.nv)
            row[:-1] = s * self.Dr[j]
            A.append(row[None, :])
            bvec.append(np.zeros(1))
        A = np.vstack(A)
        bvec = np.concatenate(bvec)
        if not with_w:
            A = A[:, :-1]
        return A, bvec  # A x + b >= 0

    def state_of(self, x) -> SystemState:
        theta = np.append(x[:-1], 0.0)
        omega = np.full(self.n, self.eq.omega_inf)
        omega[self.k] = x[-1]
        return SystemState(self.net.D @ theta, omega)

    def feasible(self, x, signs: dict[int, int] | None = None, tol: float = 1e-7) -> bool:
        A, bvec = self.linear_constraints(signs)
        return bool(np.all(A @ x + bvec >= -tol) and self.V(x) <= self.eta + tol and
                    x[-1] >= self.w_min - tol)

    # solvers
    def phase1(self, signs: dict[int, int] | None) -> tuple[float, np.ndarray]:
        """Minimum potential under the angle box and sign constraints."""
        A, bvec = self.linear_constraints(signs, with_w=False)
        th0 = np.zeros(self.nv - 1)
        if not signs:
            th0 = self.theta_inf.copy()
        res = minimize(self.potential, th0, jac=self.dpotential, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda t: A @ t + bvec, "jac": lambda t: A}],
                       options={"ftol": 1e-14, "maxiter": self.prob.settings.maxiter})
        th = res.x
        return self.potential(th), th

    def w_range(self, pot: float) -> tuple[float, float] | None:
        budget = self.eta - pot
        if budget <= 0:
            return None
        w_max = self.eq.omega_inf + math.sqrt(2.0 * budget / self.Mi)
        if w_max <= self.w_min:
            return None
        return self.w_min, w_max

    def solve(self, zf, signs: dict[int, int] | None, x0: np.ndarray) -> Solution:
        f, df = self.objective(zf)
        A, bvec = self.linear_constraints(signs)
        cons = [
            {"type": "ineq", "fun": lambda x: A @ x + bvec, "jac": lambda x: A},
            {"type": "ineq", "fun": lambda x: np.array([self.eta - self.V(x)]),
             "jac": lambda x: -self.dV(x)[None, :]},
        ]
        bounds = [(None, None)] * (self.nv - 1) + [(self.w_min, None)]
        st = self.prob.settings
        with warnings.catch_warnings():
            # SLSQP clips line-search trial points to the bounds; harmless here
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(f, x0, jac=df, method="SLSQP", bounds=bounds, constraints=cons,
                           options={"ftol": st.ftol, "maxiter": st.maxiter})
        x = res.x
        if not self.feasible(x, signs):
            x = self._repair(x, x0, signs)
        if not self.feasible(x, signs):
            return Solution(math.inf, np.append(x[:-1], 0.0), float(x[-1]), False, "infeasible result")
        return Solution(float(f(x)), np.append(x[:-1], 0.0), float(x[-1]), bool(res.success), res.message)

    def _repair(self, x, x0, signs):
        """Pull a slightly infeasible iterate back toward the feasible start."""
        if not self.feasible(x0, signs):
            return x
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.feasible(x0 + mid * (x - x0), signs, tol=0.0):
                lo = mid
            else:
                hi = mid
        return x0 + lo * (x - x0)

    def start_point(self, th: np.ndarray, pot: float, frac: float = 0.5) -> np.ndarray | None:
        rng_w = self.w_range(pot)
        if rng_w is None:
            return None
        w = rng_w[0] + frac * (rng_w[1] - rng_w[0])
        return np.append(th, w)

    def retract(self, x: np.ndarray, center: np.ndarray) -> np.ndarray:
        """Largest step from ``center`` toward ``x`` that stays feasible."""
        if self.feasible(x, tol=0.0):
            return x
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.feasible(center + mid * (x - center), tol=0.0):
                lo = mid
            else:
                hi = mid
        return center + lo * (x - center)


def _model(problem: EffortBoundProblem, net: PowerNetwork, eq: EquilibriumInfo,
           ctx: EnergyContext | None) -> _Model:
    if ctx is not None and not problem.eta < ctx.c_level:
        raise ValidationError("eta must be below the region level c")
    spec = net.controller_for(problem.bus)
    if problem.eta <= problem.d_i:
        raise InfeasibleError(
            f"eta={problem.eta:.6g} <= d_i={problem.d_i:.6g}: no admissible state has w_i > hi_th")
    model = _Model(net, eq, spec, problem)
    if model.w_range(0.0) is None:
        raise InfeasibleError("level set does not reach the threshold")
    return model


def _relaxed_zf(problem: EffortBoundProblem) -> dict:
    zf = {j: (_h_plus, _dh_plus) for j in problem.D_plus}
    zf.update({j: (_h_minus, _dh_minus) for j in problem.D_minus})
    return zf


def solve_R_upper(problem: EffortBoundProblem, net: PowerNetwork, eq: EquilibriumInfo,
                  ctx: EnergyContext | None = None, *, _with_solution: bool = False):
    """Optimal value of the inner (tightened) convex relaxation; an upper bound on g*."""
    model = _model(problem, net, eq, ctx)
    pot, th = model.phase1(None)
    x0 = model.start_point(th, pot)
    sol = model.solve(_relaxed_zf(problem), None, x0)
    return sol if _with_solution else sol.value


def _mu_pieces(problem: EffortBoundProblem, mu: dict[int, int]):
    zf, signs = {}, {}
    for j in problem.D_plus:
        zf[j] = _SIN if mu[j] == 0 else _CHORD
        signs[j] = -1 if mu[j] == 0 else 1
    for j in problem.D_minus:
        zf[j] = _CHORD if mu[j] == 0 else _SIN
        signs[j] = -1 if mu[j] == 0 else 1
    return zf, signs


@dataclass
class LowerResult:
    value: float
    best_mu: dict[int, int] | None
    solves: int
    feasible: int
    solutions: list[tuple[dict[int, int], Solution]]


def solve_R_lower(problem: EffortBoundProblem, net: PowerNetwork, eq: EquilibriumInfo,
                  ctx: EnergyContext | None = None, *, _with_solution: bool = False):
    """Minimum over all sign patterns of the outer convex relaxations; a lower bound on g*.

    Every pattern counts as one convex solve; patterns whose feasible set is
    empty (checked by a phase-1 problem) contribute ``+inf``.
    """
    inc = problem.incident
    if len(inc) > problem.settings.max_degree:
        raise DegreeError(f"bus {problem.bus} has degree {len(inc)} > {problem.settings.max_degree}")
    model = _model(problem, net, eq, ctx)
    best, best_mu = math.inf, None
    sols = []
    feas = 0
    count = 0
    for bits in itertools.product((0, 1), repeat=len(inc)):
        count += 1
        mu = dict(zip(inc, bits))
        zf, signs = _mu_pieces(problem, mu)
        pot, th = model.phase1(signs)
        x0 = model.start_point(th, pot)
        if x0 is None or not model.feasible(x0, signs):
            continue
        feas += 1
        sol = model.solve(zf, signs, x0)
        sols.append((mu, sol))
        if sol.value < best:
            best, best_mu = sol.value, mu
    res = LowerResult(best, best_mu, count, feas, sols)
    return res if _with_solution else best


def solve_Q(problem: EffortBoundProblem, net: PowerNetwork, eq: EquilibriumInfo,
            ctx: EnergyContext | None = None, *, warm_starts: Sequence[np.ndarray] = ()
            ) -> tuple[float, SystemState]:
    """Multi-start local minimization of the non-convex problem.

    Starts are seeded random points retracted into the feasible set, plus any
    warm starts (e.g. relaxation minimizers, whose value is also a candidate).
    """
    model = _model(problem, net, eq, ctx)
    st = problem.settings
    rng = np.random.default_rng(st.seed)
    zf = {j: _SIN for j in problem.incident}
    f, _ = model.objective(zf)
    center = model.start_point(model.theta_inf, 0.0, 0.5)
    w_lo, w_hi = model.w_range(0.0)
    starts = [center]
    scale = math.sqrt(2.0 * problem.eta / max(float(np.max(net.b)), 1e-12))
    for _ in range(st.starts):
        th = model.theta_inf + rng.normal(0.0, scale, size=model.nv - 1)
        w = rng.uniform(w_lo, w_hi)
        starts.append(model.retract(np.append(th, w), center))
    best_val, best_x = math.inf, None
    for x0 in list(starts) + [np.asarray(x) for x in warm_starts]:
        if not model.feasible(x0):
            continue
        v0 = f(x0)
        if v0 < best_val:
            best_val, best_x = v0, x0
        sol = model.solve(zf, None, x0)
        if sol.value < best_val:
            best_val, best_x = sol.value, np.append(sol.theta[:-1], sol.w)
    if best_x is None:
        raise InfeasibleError("no feasible start found")
    return float(best_val), model.state_of(best_x)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EffortReport:
    bus: int
    eta: float
    d_i: float
    u_min: float
    g_star: float | None
    lower: float | None
    upper: float | None
    argmin_state: SystemState | None
    mu_solves: int = 0
    mu_feasible: int = 0
    side: str = "lower"

    @property
    def sandwich(self) -> tuple[float | None, float | None]:
        return self.lower, self.upper

    def to_dict(self) -> dict:
        st = self.argmin_state
        return {
            "bus": self.bus, "side": self.side, "eta": self.eta, "d_i": self.d_i,
            "u_min" if self.side == "lower" else "u_max": self.u_min,
            "g_star": self.g_star, "lower": self.lower, "upper": self.upper,
            "mu_solves": self.mu_solves, "mu_feasible": self.mu_feasible,
            "argmin_state": None if st is None else {
                "lambda": [float(v) for v in st.lam], "omega": [float(v) for v in st.omega]},
        }


def effort_report(problem: EffortBoundProblem, net: PowerNetwork, eq: EquilibriumInfo,
                  ctx: EnergyContext | None = None) -> EffortReport:
    """``u_min`` with the certified sandwich ``lower <= g* <= upper``."""
    if problem.eta <= problem.d_i:
        return EffortReport(problem.bus, problem.eta, problem.d_i, 0.0, None, None, None, None)
    model = _model(problem, net, eq, ctx)
    up = solve_R_upper(problem, net, eq, ctx, _with_solution=True)
    low = solve_R_lower(problem, net, eq, ctx, _with_solution=True)
    warm = []
    if math.isfinite(up.value):
        warm.append(np.append(up.theta[:-1], up.w))
    for _, s in low.solutions:
        if math.isfinite(s.value):
            warm.append(np.append(s.theta[:-1], s.w))
    g, state = solve_Q(problem, net, eq, ctx, warm_starts=[w for w in warm if model.feasible(w)])
    return EffortReport(problem.bus, problem.eta, problem.d_i, min(0.0, g), g, low.value, up.value,
                        state, low.solves, low.feasible)


def u_min(problem: EffortBoundProblem, net: PowerNetwork, eq: EquilibriumInfo,
          ctx: EnergyContext | None = None) -> float:
    """Lower bound on the controller input over trajectories starting in the level set."""
    if problem.eta <= problem.d_i:
        return 0.0
    return effort_report(problem, net, eq, ctx).u_min


# ---------------------------------------------------------------------------
# Mirrored side: upper bound on the input
# ---------------------------------------------------------------------------


def _mirror(net: PowerNetwork) -> PowerNetwork:
    """Network with injections and frequency bands negated."""
    buses = tuple(Bus(b.id, b.inertia_M, b.damping_E, -b.power_p, (), b.generator) for b in net.buses)
    ctrls = tuple(
        ControlledBusSpec(c.bus_id, -c.omega_hi, -c.omega_lo, -c.omega_hi_th, -c.omega_lo_th,
                          c.kappa_lower, c.kappa_upper, c.epsilon_shrink)
        for c in net.controllers
    )
    return PowerNetwork(buses, net.lines, ctrls, net.name + "-mirror")


def u_max(net: PowerNetwork, eq: EquilibriumInfo, ctx: EnergyContext, bus: int, eta: float,
          settings: SolverSettings | None = None) -> EffortReport:
    """Upper bound on the input, by applying the lower-bound machinery to the mirrored network.

    Under ``(lambda, omega, p) -> (-lambda, -omega, -p)`` the dynamics and the
    energy are unchanged and the controller input changes sign.
    """
    mnet = _mirror(net)
    meq = solve_equilibrium(mnet, 0.0)
    mctx = EnergyContext(meq, ctx.c_level, ctx.beta, ctx.c_bar)
    prob = EffortBoundProblem.build(mnet, meq, mctx, bus, eta, settings)
    rep = effort_report(prob, mnet, meq, mctx)
    st = rep.argmin_state
    flip = None if st is None else SystemState(-st.lam, -st.omega)
    neg = (lambda v: None if v is None else -v)
    return EffortReport(bus, eta, rep.d_i, -rep.u_min, neg(rep.g_star), neg(rep.upper),
                        neg(rep.lower), flip, rep.mu_solves, rep.mu_feasible, side="upper")


# ---------------------------------------------------------------------------
# Sampling the level set
# ---------------------------------------------------------------------------


def sample_level_set(net: PowerNetwork, eq: EquilibriumInfo, eta: float, center: SystemState,
                     count: int, seed: int = 0, spread: float = 0.1,
                     shrink: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Seeded admissible states with ``V <= eta`` and all angles in the closed box.

    Points are Gaussian perturbations of ``center`` (angles through ``theta``
    so they stay in range(D)) pulled radially toward the equilibrium until they
    satisfy the constraints. ``spread`` scales the perturbation relative to the
    level-set radius.
    """
    from ..energy import energy_arrays

    rng = np.random.default_rng(seed)
    D = net.D
    theta_c = np.linalg.lstsq(D, center.lam, rcond=None)[0]
    theta_c -= theta_c[-1]
    theta_e = np.asarray(eq.theta) if eq.theta is not None else np.linalg.lstsq(D, eq.lambda_inf, rcond=None)[0]
    theta_e = theta_e - theta_e[-1]
    w_e = np.full(net.n, eq.omega_inf)
    s_th = spread * math.sqrt(2.0 * eta / float(np.max(net.b)))
    s_w = spread * np.sqrt(2.0 * eta / np.asarray(net.M))
    level = eta * (1.0 - shrink)

    def ok(th, w):
        lam = D @ th
        return bool(np.all(np.abs(lam) <= HALF_PI)) and \
            float(energy_arrays(net, eq, lam, w)) <= level

    lams = np.empty((count, net.m))
    oms = np.empty((count, net.n))
    for r in range(count):
        th = theta_c + rng.normal(0.0, s_th, size=net.n)
        th -= th[-1]
        w = center.omega + rng.normal(0.0, 1.0, size=net.n) * s_w
        if not ok(th, w):
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if ok(theta_e + mid * (th - theta_e), w_e + mid * (w - w_e)):
                    lo = mid
                else:
                    hi = mid
            th = theta_e + lo * (th - theta_e)
            w = w_e + lo * (w - w_e)
        lams[r] = D @ th
        oms[r] = w
    return lams, oms
