"""Command-line front end.

Subcommands: ``run`` (presets), ``simulate``, ``certify``, ``bound``,
``robust`` and ``envelope``. Frequencies on the command line are in Hz unless
``--unit rad_s`` is given; CSV files are in rad/s and reports display Hz.

Exit codes: 0 success, 2 parse or missing-file errors, 3 validation errors,
4 convergence failures, 5 simulation guard trips.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import errors as E
from .bounds.effort import EffortBoundProblem, SolverSettings, effort_report, u_max
from .bounds.envelope import entry_time_estimate, envelope_z
from .bounds.robust import condition_lhs, find_min_delta, robust_delta_check
from .controller import UncertaintyBounds, assumption_violations
from .energy import EnergyContext, in_phi
from .equilibrium import solve_equilibrium
from .network import DATA_DIR, TWO_PI, PowerNetwork, load_network
from .scenarios import PRESETS, build_preset, run_bound_sweep, sinusoid_schedule
from .simulator import (AuditReport, ControllerMode, Scenario, SeededUniform, Trajectory,
                        input_oscillation, integrate, make_measurement_errors, monitor_report, scenario_from_dict,
                        write_trajectory_csv)
from .state import SystemState

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_GUARD = 0, 2, 3, 4, 5


def fmt(x: float | None) -> str:
    """Six significant digits."""
    if x is None:
        return "none"
    return f"{x:.6g}"


def hz(x: float | None) -> str:
    return "none" if x is None else f"{x / TWO_PI:.6g} Hz"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def resolve_network(arg: str) -> PowerNetwork:
    """Load a network file; bare names of bundled datasets are accepted too."""
    path = Path(arg)
    if not path.exists():
        bundled = DATA_DIR / (path.name if path.suffix == ".json" else f"{path.name}.json")
        if bundled.exists() and len(path.parts) == 1:
            path = bundled
    return load_network(path)


def _freq(value: float, unit: str) -> float:
    return value * TWO_PI if unit == "hz" else value


def _dump(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o: Any):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _finite(x: float) -> float | str:
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def trajectory_lines(traj: Trajectory, rep: AuditReport) -> list[str]:
    """PASS/FAIL lines for one trajectory."""
    out = [f"[{traj.name or 'run'}] controller: {traj.mode.label()}"]
    v = "PASS" if rep.v_monotone else f"FAIL ({len(rep.v_violations)} steps)"
    out.append(f"  V monotone: {v.split(' ')[0]} (max increase {fmt(rep.v_max_increase)})")
    bad = [b for b, v_ in rep.band_violations.items() if v_]
    if bad:
        b = bad[0]
        out.append(f"  safe-band invariance: FAIL (bus {b} exit at t≈{fmt(rep.first_exit[b])} s)")
    else:
        out.append("  safe-band invariance: PASS")
    bad = [b for b, v_ in rep.approach_violations.items() if v_]
    outside = [b for b, ins in rep.started_inside.items() if not ins]
    if bad:
        out.append(f"  attractivity: FAIL (bus {bad[0]}, first at t≈{fmt(rep.approach_violations[bad[0]][0][0])} s)")
    elif outside:
        ent = ", ".join(f"{b}@{fmt(rep.first_entry[b])} s" for b in outside)
        out.append(f"  attractivity: PASS (entries {ent})")
    else:
        out.append("  attractivity: PASS (all buses start inside)")
    lnz = rep.last_nonzero_u
    t_end = float(traj.t[-1])
    if lnz is None:
        out.append("  finite deactivation: PASS (controller never active)")
    elif lnz < t_end:
        out.append(f"  finite deactivation: PASS (last nonzero u at t≈{fmt(lnz)} s)")
    else:
        out.append(f"  finite deactivation: FAIL (still active at t_end={fmt(t_end)} s)")
    if traj.mode.kind in ("robust", "discontinuous"):
        for b in traj.controlled_ids:
            count, times = input_oscillation(traj.t, traj.u_of(b))
            if count:
                out.append(f"  input oscillation at bus {b}: {count} reversals (first at t≈{fmt(float(times[0]))} s)")
            else:
                out.append(f"  input oscillation at bus {b}: none")
    for spec in traj.specs:
        w = traj.omega_of(spec.bus_id)
        out.append(f"  bus {spec.bus_id}: omega range [{hz(float(w.min()))}, {hz(float(w.max()))}], "
                   f"band [{hz(spec.omega_lo)}, {hz(spec.omega_hi)}]")
    return out


def certify_lines(net: PowerNetwork, beta: float, t: float = 0.0) -> tuple[list[str], dict]:
    eq = solve_equilibrium(net, t)
    lines = [f"network {net.name or '?'}: n={net.n}, m={net.m}, controlled={sorted(net.controlled_set)}"]
    holds = eq.sync_margin < 1
    lines.append(f"sync condition: {'PASS' if holds else 'FAIL'} (margin {fmt(eq.sync_margin)})")
    info: dict[str, Any] = {"sync_margin": eq.sync_margin, "sync_holds": holds,
                            "converged": eq.converged, "omega_inf": eq.omega_inf}
    if not eq.converged:
        lines.append(f"equilibrium: not converged ({eq.message})")
        return lines, info
    ctx = EnergyContext.build(net, eq, beta)
    lines.append(f"omega_inf: {hz(eq.omega_inf)}; max |lambda_inf| = {fmt(float(np.max(np.abs(eq.lambda_inf))))} rad")
    lines.append(f"region level c: {fmt(ctx.c_level)}; beta: {fmt(beta)}; c/beta: {fmt(ctx.phi_level)}")
    st = SystemState(eq.lambda_inf, np.full(net.n, eq.omega_inf))
    lines.append(f"equilibrium in Phi: {'PASS' if in_phi(net, ctx, st) else 'FAIL'}")
    info.update(c=ctx.c_level, beta=beta, lambda_inf=eq.lambda_inf, residual=eq.residual)
    return lines, info


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _run_scenarios(scenarios: Sequence[tuple[str, Scenario]], out: Path, stride: int,
                   beta: float) -> tuple[list[str], dict]:
    lines, audit = [], {}
    for label, sc in scenarios:
        traj = integrate(sc)
        rep = monitor_report(traj)
        csv_path = out / f"{sc.name or label}.csv"
        write_trajectory_csv(traj, csv_path, stride)
        lines += trajectory_lines(traj, rep)
        audit[sc.name or label] = {"audit": rep.to_dict(), "csv": csv_path.name,
                                   "controller": traj.mode.label()}
    return lines, audit


def cmd_run(args) -> int:
    net = resolve_network(args.network)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header, cert = certify_lines(net, args.beta)
    if args.preset == "bound_sweep_100":
        res = run_bound_sweep(net, args.bus, args.eta, args.count, args.seed, args.t_end or 10.0,
                              args.dt, args.beta)
        rep = res.report
        lines = header + [
            f"bound sweep: bus {args.bus}, eta {fmt(args.eta)}, {len(res.min_u)} trajectories",
            f"  u_min: {fmt(rep.u_min)}  sandwich [lower, upper] = [{fmt(rep.lower)}, {fmt(rep.upper)}]",
            f"  min over trajectories of min_t u: {fmt(float(res.min_u.min()))}",
            f"  bound realization: {'PASS' if res.passes() else 'FAIL'} (worst gap {fmt(res.worst_gap)})",
        ]
        np.savetxt(out / "bound_sweep_min_u.csv", res.min_u[:, None], fmt="%.17g",
                   header="min_t u per trajectory [p.u.]")
        audit = {"certify": cert, "bound": rep.to_dict(), "min_u": res.min_u,
                 "passes": res.passes(), "worst_gap": res.worst_gap}
    else:
        gammas = tuple(args.gamma) if args.gamma else None
        runs = build_preset(args.preset, net, t_end=args.t_end, dt=args.dt, gammas=gammas,
                            seed=args.seed)
        lines, audit = _run_scenarios([(r.label, r.scenario) for r in runs], out, args.csv_stride,
                                      args.beta)
        lines = header + lines
        audit = {"certify": cert, "runs": audit}
    _finish(out, lines, audit)
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = resolve_network(args.network)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        raw = json.loads(Path(args.scenario).read_text())
    except json.JSONDecodeError as exc:
        raise E.ParseError(f"{args.scenario}: {exc}") from exc
    if args.dt is not None:
        raw["dt"] = args.dt
    sc = scenario_from_dict(raw, net)
    if not sc.name:
        sc = dataclasses.replace(sc, name=Path(args.scenario).stem)
    header, cert = certify_lines(sc.effective_network(), args.beta)
    lines, audit = _run_scenarios([(sc.name, sc)], out, args.csv_stride, args.beta)
    _finish(out, header + lines, {"certify": cert, "runs": audit})
    return EXIT_OK


def cmd_certify(args) -> int:
    net = resolve_network(args.network)
    lines, info = certify_lines(net, args.beta, args.t)
    if args.c_bar is not None and info.get("converged"):
        info["c_bar"] = args.c_bar
    _emit(args, lines, info)
    return EXIT_OK


def cmd_bound(args) -> int:
    net = resolve_network(args.network)
    eq = solve_equilibrium(net, 0.0)
    if not eq.converged:
        raise E.ConvergenceError(eq.message)
    ctx = EnergyContext.build(net, eq, args.beta)
    settings = SolverSettings(starts=args.starts, seed=args.seed)
    if args.side == "upper":
        rep = u_max(net, eq, ctx, args.bus, args.eta, settings)
    else:
        prob = EffortBoundProblem.build(net, eq, ctx, args.bus, args.eta, settings)
        rep = effort_report(prob, net, eq, ctx)
    name = "u_max" if args.side == "upper" else "u_min"
    lines = [f"effort bound at bus {args.bus}, eta {fmt(args.eta)} (c = {fmt(ctx.c_level)}), d_i {fmt(rep.d_i)}",
             f"  {name}: {fmt(rep.u_min)}",
             f"  sandwich [lower, upper]: [{fmt(rep.lower)}, {fmt(rep.upper)}]; local optimum {fmt(rep.g_star)}",
             f"  outer-relaxation sign patterns: {rep.mu_solves} ({rep.mu_feasible} feasible)"]
    _emit(args, lines, rep.to_dict())
    return EXIT_OK


def cmd_robust(args) -> int:
    net = resolve_network(args.network)
    spec = net.controller_for(args.bus)
    k = net.index_of(args.bus)
    E_true = float(net.E[k])
    u = args.unit
    E_hat = None if args.E_hat is None else (args.E_hat / TWO_PI if u == "hz" else args.E_hat)
    eps_E = args.eps_E / TWO_PI if u == "hz" else args.eps_E
    if E_hat is not None and args.eps_E == 0.0:
        eps_E = abs(E_hat - E_true)
    p_i = float(net.p_at(0.0)[k])
    eps_p = args.eps_p if args.eps_p_rel is None else args.eps_p_rel * abs(p_i)
    unc = UncertaintyBounds(_freq(args.eps_omega, u), args.eps_lambda, eps_p, eps_E, E_hat)
    eq = solve_equilibrium(net, 0.0)
    issues = assumption_violations(spec, unc, eq.omega_inf, E_true)
    lines = [f"robustness at bus {args.bus}: eps_omega {hz(unc.eps_omega)}, eps_lambda {fmt(unc.eps_lambda)}, "
             f"eps_p {fmt(unc.eps_p)}, eps_E {fmt(unc.eps_E)} (per rad/s)"]
    lines.append(f"  uncertainty assumption: {'PASS' if not issues else 'FAIL (' + '; '.join(issues) + ')'}")
    info: dict[str, Any] = {"bus": args.bus, "assumption_issues": issues}
    if args.delta is not None:
        d = _freq(args.delta, u)
        a, b = condition_lhs(spec, unc, d, E_true=E_true, worst_case=args.worst_case)
        ok = robust_delta_check(spec, unc, d, E_true=E_true, worst_case=args.worst_case)
        lines.append(f"  condition at delta {hz(d)}: {'PASS' if ok else 'FAIL'} (lhs {fmt(a)}, {fmt(b)})")
        info.update(delta=d, lhs=[_finite(a), _finite(b)], holds=ok)
    dmin = find_min_delta(spec, unc, E_true=E_true, worst_case=args.worst_case)
    lines.append(f"  smallest certified delta: {hz(dmin)}")
    info["min_delta"] = dmin
    if args.simulate > 0:
        delta = dmin if args.delta is None else _freq(args.delta, u)
        if delta is None:
            lines.append("  noisy simulation skipped: no certified delta")
        else:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            worst = -math.inf
            T = args.t_end or 30.0
            sched = sinusoid_schedule(net, T)
            bounds_all = {b: (unc if b == args.bus else UncertaintyBounds()) for b in net.controlled_set}
            E_all = {b: float(net.E[net.index_of(b)]) for b in net.controlled_set}
            p_scale = None if args.p_scale is None else {args.bus: args.p_scale}
            for r in range(args.simulate):
                errs = make_measurement_errors(bounds_all, SeededUniform(horizon=T + 1.0),
                                               args.seed + r, E_all, p_scale)
                sc = Scenario(net, T, args.dt, "equilibrium", sched, ControllerMode.robust(errs),
                              args.seed + r, name=f"robust_{r}")
                traj = integrate(sc)
                w = traj.omega_of(args.bus)
                worst = max(worst, float(np.max(w - spec.omega_hi)), float(np.max(spec.omega_lo - w)))
            ok = worst <= delta + 1e-6
            lines.append(f"  {args.simulate} noisy runs: relaxed band {'PASS' if ok else 'FAIL'} "
                         f"(max excursion beyond band {hz(max(worst, 0.0))}, delta {hz(delta)})")
            info.update(simulations=args.simulate, max_excursion=worst, relaxed_band_holds=ok)
    _emit(args, lines, info)
    return EXIT_OK


def cmd_envelope(args) -> int:
    net = resolve_network(args.network)
    spec = net.controller_for(args.bus)
    if args.epsilon:
        spec = spec.with_shrink(_freq(args.epsilon, args.unit))
    M = float(net.M[net.index_of(args.bus)])
    w0 = _freq(args.omega0, args.unit)
    env = envelope_z(spec, M, w0, args.t_end or 10.0, args.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"envelope_bus{args.bus}.csv"
    cols = [env.t, env.z]
    head = "t,z"
    if env.gamma is not None:
        cols += [env.exponential_bound(env.t), env.implicit_residuals]
        head += ",exp_bound,implicit_residual"
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header="units: t [s], z [rad/s]\n" + head, comments="# ")
    lines = [f"envelope at bus {args.bus}: z(0) = {hz(w0)}, z(t_end) = {hz(float(env.z[-1]))}"]
    info: dict[str, Any] = {"csv": path.name, "z_end": float(env.z[-1])}
    if env.implicit_residuals is not None:
        r = float(env.implicit_residuals.max())
        lines.append(f"  implicit relation residual: max {fmt(r)}")
        info["max_implicit_residual"] = r
    if spec.epsilon_shrink > 0:
        try:
            t1 = entry_time_estimate(spec, M, w0)
            lines.append(f"  entry time estimate: {fmt(t1)} s")
            info["entry_time"] = t1
        except E.NotReachedError as exc:
            lines.append(f"  entry time estimate: not reached ({exc})")
    _emit(args, lines, info, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# output and entry point
# ---------------------------------------------------------------------------


def _finish(out: Path, lines: list[str], audit: dict) -> None:
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    _dump(audit, out / "audit.json")
    sys.stdout.write(text)


def _emit(args, lines: list[str], info: dict, out: Path | None = None) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out and out is None:
        out = Path(args.out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}_report.txt").write_text(text)
        _dump(info, out / f"{args.command}.json")


def _gamma(s: str) -> float:
    return math.inf if s.lower() in ("inf", "infinity", "+inf") else float(s)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqguard", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default: str | None = "freqguard_out"):
        sp.add_argument("--network", required=True, help="network JSON (or bundled name: ieee39, two_bus)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--beta", type=float, default=1.01, help="shrink factor for Phi (> 1)")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("run", help="run a preset scenario")
    common(sp)
    sp.add_argument("--preset", required=True, choices=PRESETS)
    sp.add_argument("--t-end", type=float, default=None)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--gamma", type=_gamma, nargs="*", help="gamma values (inf allowed)")
    sp.add_argument("--eta", type=float, default=0.5)
    sp.add_argument("--bus", type=int, default=30)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--csv-stride", type=int, default=10, help="write every k-th sample")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("simulate", help="simulate a scenario file")
    common(sp)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--csv-stride", type=int, default=10)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("certify", help="sync condition, region level, Phi membership")
    common(sp, None)
    sp.add_argument("--t", type=float, default=0.0, help="time at which injections are evaluated")
    sp.add_argument("--c-bar", type=float, default=None)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("bound", help="control-effort bound with relaxation sandwich")
    common(sp, None)
    sp.add_argument("--bus", type=int, required=True)
    sp.add_argument("--eta", type=float, required=True)
    sp.add_argument("--side", choices=("lower", "upper"), default="lower")
    sp.add_argument("--starts", type=int, default=16)
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("robust", help="margin search under bounded uncertainty")
    common(sp, None)
    sp.add_argument("--bus", type=int, required=True)
    sp.add_argument("--unit", choices=("hz", "rad_s"), default="hz")
    sp.add_argument("--eps-omega", type=float, default=0.0)
    sp.add_argument("--eps-lambda", type=float, default=0.0)
    sp.add_argument("--eps-p", type=float, default=0.0)
    sp.add_argument("--eps-p-rel", type=float, default=None, help="eps_p as a fraction of |p_i|")
    sp.add_argument("--eps-E", type=float, default=0.0)
    sp.add_argument("--E-hat", type=float, default=None)
    sp.add_argument("--p-scale", type=float, default=None, help="controller uses p_scale * p_i")
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--worst-case", action="store_true",
                    help="take the frequency error at its worst sign")
    sp.add_argument("--simulate", type=int, default=0, help="number of seeded noisy runs")
    sp.add_argument("--t-end", type=float, default=None)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.set_defaults(func=cmd_robust)

    sp = sub.add_parser("envelope", help="emit the attractivity envelope")
    common(sp)
    sp.add_argument("--bus", type=int, required=True)
    sp.add_argument("--omega0", type=float, required=True)
    sp.add_argument("--unit", choices=("hz", "rad_s"), default="hz")
    sp.add_argument("--epsilon", type=float, default=0.0)
    sp.add_argument("--t-end", type=float, default=None)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.set_defaults(func=cmd_envelope)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, E.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except E.BlowupError as exc:
        print(f"guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (E.ConvergenceError, E.NotReachedError) as exc:
        print(f"convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (E.ValidationError, E.InfeasibleError, E.DegreeError, E.DomainError, E.BoundError,
            E.MissingParameterError, E.SingularityError) as exc:
        print(f"validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
