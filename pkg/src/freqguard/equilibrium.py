"""Synchronized equilibrium and the synchronization sufficient condition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, OutsideGammaError, SingularityError
from .network import PowerNetwork

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class EquilibriumInfo:
    omega_inf: float
    lambda_inf: np.ndarray
    p_tilde: np.ndarray
    sync_margin: float
    converged: bool
    residual: float = math.nan
    iterations: int = 0
    theta: np.ndarray | None = field(default=None, repr=False)
    message: str = ""

    @property
    def in_gamma(self) -> bool:
        return bool(np.all(np.abs(self.lambda_inf) < HALF_PI))


def _p(net: PowerNetwork, t: float, p) -> np.ndarray:
    return net.p_at(t) if p is None else np.asarray(p, dtype=float)


def omega_inf(net: PowerNetwork, t: float = 0.0, p=None) -> float:
    """Damping-weighted average injection ``sum(p) / sum(E)`` (rad/s)."""
    return math.fsum(_p(net, t, p)) / math.fsum(net.E)


def p_tilde(net: PowerNetwork, t: float = 0.0, p=None) -> np.ndarray:
    pv = _p(net, t, p)
    return pv - omega_inf(net, t, pv) * net.E


def laplacian_solve(L: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``L^+ y`` for a connected-graph Laplacian.

    The mean of ``y`` is removed, the last node is pinned to zero, and the
    result is shifted to be orthogonal to the ones vector.
    """
    n = L.shape[0]
    if n == 1:
        return np.zeros(1)
    ev = np.linalg.eigvalsh(L)
    tol = 1e-10 * max(1.0, float(ev[-1]))
    if int(np.sum(ev <= tol)) > 1:
        raise SingularityError("Laplacian nullspace has dimension > 1 (disconnected graph)")
    y = np.asarray(y, dtype=float)
    y = y - y.mean()
    x = np.zeros(n)
    x[:-1] = np.linalg.solve(L[:-1, :-1], y[:-1])
    return x - x.mean()


def edge_inf_seminorm(net: PowerNetwork, x: np.ndarray) -> float:
    """``max over lines |x_i - x_j|``."""
    return float(np.max(np.abs(net.D @ x), initial=0.0))


def sync_condition(net: PowerNetwork, t: float = 0.0, p=None) -> tuple[bool, float]:
    """Sufficient condition for a unique equilibrium inside the open angle box."""
    margin = edge_inf_seminorm(net, laplacian_solve(net.L, p_tilde(net, t, p)))
    return margin < 1.0, margin


def solve_equilibrium(net: PowerNetwork, t: float = 0.0, p=None, *, theta0=None,
                      tol: float = 1e-10, max_iter: int = 100,
                      check_sync: bool = True) -> EquilibriumInfo:
    """Damped Newton on the reduced angles (highest-index bus pinned at 0).

    When the synchronization condition fails a non-converged result is
    returned instead of raising, unless Newton still lands inside the box.
    ``check_sync=False`` skips the condition (margin reported as NaN), which
    is useful for warm-started re-solves along a trajectory.
    """
    pv = _p(net, t, p)
    w_inf = omega_inf(net, t, pv)
    pt = pv - w_inf * net.E
    if check_sync:
        holds, margin = sync_condition(net, t, pv)
    else:
        holds, margin = True, math.nan
    n = net.n
    D, DtYb = net.D, net.DtYb
    Dr = D[:, :-1]

    def resid(th_r: np.ndarray) -> np.ndarray:
        return (DtYb @ np.sin(Dr @ th_r))[:-1] - pt[:-1]

    if theta0 is None:
        th = np.zeros(n - 1)
    else:
        t0 = np.asarray(theta0, dtype=float)
        th = t0[:-1] - t0[-1]
    F = resid(th)
    fn = float(np.max(np.abs(F), initial=0.0))
    it = 0
    left_box = False
    while fn > tol and it < max_iter:
        it += 1
        lam = Dr @ th
        J = (DtYb * np.cos(lam)) @ Dr
        J = J[:-1]
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        s = 1.0
        for _ in range(40):
            cand = th + s * step
            Fc = resid(cand)
            fc = float(np.max(np.abs(Fc)))
            if fc < fn:
                break
            s *= 0.5
        else:
            break
        th, F, fn = cand, Fc, fc
        if np.any(np.abs(Dr @ th) > HALF_PI):
            left_box = True
    theta = np.append(th, 0.0)
    lam = D @ theta
    # residual over every bus (the pinned row follows from the others)
    full = float(np.max(np.abs(DtYb @ np.sin(lam) - pt), initial=0.0))
    inside = bool(np.all(np.abs(lam) < HALF_PI))
    ok = fn <= tol and inside
    if ok:
        return EquilibriumInfo(w_inf, lam, pt, margin, True, full, it, theta)
    if not holds:
        msg = f"sync condition fails (margin {margin:.6g}); Newton residual {full:.3g}"
        return EquilibriumInfo(w_inf, lam, pt, margin, False, full, it, theta, msg)
    if fn <= tol or left_box:
        raise OutsideGammaError(f"Newton iterate left the closed angle box (residual {full:.3g})")
    raise ConvergenceError(f"Newton did not converge in {it} iterations (residual {full:.3g})")
