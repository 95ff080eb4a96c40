"""Sufficient condition for a relaxed frequency band under bounded uncertainty.

For a linear class-K slope ``gamma`` and a margin ``delta`` the upper-side
condition reads

    -gamma (e_w + delta) / (hi - hi_th + delta + e_w)
        + e_E (delta + hi) + E_hat e_w + e_lam + e_p <= 0

and the lower side replaces ``hi - hi_th`` by ``lo_th - lo`` and
``delta + hi`` by ``delta - lo``. All ``e_*`` are the declared bounds.

As written, the first term is evaluated at ``+e_w`` although it decreases in
the frequency error; ``worst_case=True`` maximizes over ``e in {-e_w, +e_w}``
instead, which is the sharper (and provably sufficient) variant.
"""

from __future__ import annotations

import math

import numpy as np

from ..controller import ControlledBusSpec, UncertaintyBounds
from ..errors import ValidationError


def _E_hat(unc: UncertaintyBounds, E_true: float | None) -> float:
    if unc.E_hat is not None:
        return unc.E_hat
    if E_true is None:
        raise ValidationError("E_hat missing; pass E_true")
    return E_true


def condition_lhs(spec: ControlledBusSpec, unc: UncertaintyBounds, delta: float, *,
                  E_true: float | None = None, worst_case: bool = False) -> tuple[float, float]:
    """Left-hand sides of the upper- and lower-side conditions."""
    gamma = spec.gamma
    E_hat = _E_hat(unc, E_true)
    rest = unc.eps_lambda + unc.eps_p
    gaps = (spec.omega_hi - spec.omega_hi_th, spec.omega_lo_th - spec.omega_lo)
    levels = (delta + spec.omega_hi, delta - spec.omega_lo)
    out = []
    for gap, level in zip(gaps, levels):
        if worst_case:
            errs = (-unc.eps_omega, unc.eps_omega)
        else:
            errs = (unc.eps_omega,)
        vals = []
        for e in errs:
            if math.isinf(gamma):
                # the barrier term tends to -inf whenever delta + e > 0
                first = -math.inf if delta + e > 0 else 0.0
            else:
                first = -gamma * (e + delta) / (gap + delta + e)
            vals.append(first + E_hat * e)
        lvl = abs(level) if worst_case else level
        out.append(max(vals) + unc.eps_E * lvl + rest)
    return out[0], out[1]


def robust_delta_check(spec: ControlledBusSpec, uncertainty: UncertaintyBounds, delta: float, *,
                       E_true: float | None = None, worst_case: bool = False) -> bool:
    if not delta > 0:
        return False
    a, b = condition_lhs(spec, uncertainty, delta, E_true=E_true, worst_case=worst_case)
    return a <= 0 and b <= 0


def find_min_delta(spec: ControlledBusSpec, uncertainty: UncertaintyBounds, *,
                   delta_max: float | None = None, points: int = 200, tol: float = 1e-6,
                   E_true: float | None = None, worst_case: bool = False) -> float | None:
    """Smallest margin whose whole tail up to ``delta_max`` passes, or None.

    A coarse grid finds the smallest passing tail; bisection between its first
    point and the failing point below refines it to ``tol``.
    """
    dmax = spec.omega_hi - spec.omega_hi_th if delta_max is None else float(delta_max)
    grid = np.linspace(dmax / points, dmax, points)

    def ok(d: float) -> bool:
        return robust_delta_check(spec, uncertainty, d, E_true=E_true, worst_case=worst_case)

    passing = np.array([ok(float(d)) for d in grid])
    if not passing.any() or not passing[-1]:
        return None
    fails = np.flatnonzero(~passing)
    start = 0 if fails.size == 0 else int(fails[-1]) + 1
    hi_d = float(grid[start])
    lo_d = 0.0 if start == 0 else float(grid[start - 1])
    while hi_d - lo_d > tol:
        mid = 0.5 * (lo_d + hi_d)
        if ok(mid):
            hi_d = mid
        else:
            lo_d = mid
    return hi_d
