"""Command-line entry point.

    dtn-lqr <command> --scenario <path-or-bundled-name> [options]

Commands: feasibility, solve-ct, solve-dt, solve-inf, solve-dt-inf,
simulate, sweep. Scenario files are JSON (see scenario module); bundled
names like fig2_c4_005 resolve to the packaged library. Outputs are CSV
(comma separated, header row, LF endings, 17-significant-digit floats)
plus a summary JSON per solve/simulate run, all written atomically; --plot
additionally renders PNG figures next to the delimited files.

Exit codes: 0 ok, 2 missing scenario file, 3 schema violation, 4 solver
blow-up (message carries the escape time), 5 infeasible timer schedule
(message lists the offending grid steps).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ct_lqr, dt_lqr, feasibility, inf_lqr, mc_sim
from .model import InfeasibleControlError, check_constraints
from .scenario import (Scenario, ScenarioError, load_scenario,
                       scaled_problem, trajectory_to_si)

EXIT_OK = 0
EXIT_MISSING_FILE = 2
EXIT_SCHEMA = 3
EXIT_BLOWUP = 4
EXIT_INFEASIBLE_TIMERS = 5


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_text_atomic(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: str, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _write_text_atomic(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_summary(path: str, summary: dict):
    text = json.dumps(_jsonable(summary), sort_keys=True, indent=2)
    _write_text_atomic(path, text + "\n")


def _out_paths(sc: Scenario, out_flag: str | None, suffix: str):
    directory = out_flag or sc.outputs.directory or "."
    os.makedirs(directory, exist_ok=True)
    prefix = sc.outputs.prefix or sc.name
    return directory, os.path.join(directory, f"{prefix}_{suffix}")


def _trajectory_rows(traj):
    k = traj.X.shape[1]
    for j in range(traj.t.size):
        yield ([traj.t[j]] + list(traj.X[j]) + list(traj.Xhat[j])
               + list(traj.u[j]) + [traj.D[j]])


def _trajectory_header(k: int) -> list[str]:
    return (["t"] + [f"X_{i + 1}" for i in range(k)]
            + [f"Xhat_{i + 1}" for i in range(k)]
            + [f"u_{i + 1}" for i in range(k)] + ["D"])


def _write_trajectory_outputs(sc: Scenario, traj_si, summary: dict,
                              out: str | None, mode_tag: str, plot: bool):
    k = traj_si.X.shape[1]
    _, csv_path = _out_paths(sc, out, f"{mode_tag}_trajectory.csv")
    write_csv(csv_path, _trajectory_header(k), _trajectory_rows(traj_si))
    summary["trajectory_csv"] = os.path.basename(csv_path)
    _, json_path = _out_paths(sc, out, f"{mode_tag}_summary.json")
    write_summary(json_path, summary)
    if plot:
        from . import plots

        _, png_path = _out_paths(sc, out, f"{mode_tag}_trajectory.png")
        plots.plot_trajectory(traj_si, png_path, title=sc.name)
    print(f"{sc.name}: wrote {os.path.basename(csv_path)} and "
          f"{os.path.basename(json_path)}")


def _constraint_summary(traj_si, sc: Scenario, tol: float = 1e-6):
    violations = check_constraints(traj_si, sc.model, tol=tol)
    kinds: dict[str, int] = {}
    for v in violations:
        kinds[v.kind] = kinds.get(v.kind, 0) + 1
    return len(violations), kinds


def _parse_delta(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--delta: {exc}") from exc
    if value <= 0:
        raise argparse.ArgumentTypeError("--delta must be positive")
    return value


def _parse_sweep(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("--sweep expects lo:hi:step")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--sweep: {exc}") from exc
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError("--sweep needs hi >= lo, step > 0")
    return np.arange(lo, hi + 0.5 * step, step)


def _feasibility_pair(sc: Scenario):
    """(lambda_d, lambda_out) for the frontier commands, in solver units."""
    if sc.feas_lambda_d is not None:
        return sc.feas_lambda_d, sc.feas_lambda_out
    m, _, _ = scaled_problem(sc)
    return m.lambda_d, m.lambda_d


def cmd_feasibility(sc: Scenario, args, print_report: bool = True) -> int:
    m, cw, _ = scaled_problem(sc)
    ld, lo = _feasibility_pair(sc)
    report = feasibility.analyze(cw, m, lambda_d=ld, lambda_out=lo)
    if print_report:
        if report.is_pd:
            verdict = "positive definite"
        elif report.is_psd:
            verdict = "positive semidefinite"
        else:
            verdict = "indefinite"
        print(f"scenario: {sc.name}")
        print(f"R eigenvalues: "
              f"{', '.join(_fmt(e) for e in report.eigenvalues)}")
        print(f"smallest eigenvalue: {_fmt(report.eigenvalues[0])}")
        print(f"verdict: {verdict}")
        print(f"sufficient c4 bound: {_fmt(report.sufficient_bound)}")
        print(f"sufficient c4 bound (alpha form): "
              f"{_fmt(report.alpha_bound)}")
    if args.sweep is not None:
        rows = feasibility.frontier_sweep(args.sweep, ld, lo)
        _, csv_path = _out_paths(sc, args.out, "frontier.csv")
        write_csv(csv_path, ["c1_over_c3", "min_c4_over_c3",
                             "sufficient_bound"], rows)
        print(f"{sc.name}: wrote {os.path.basename(csv_path)}")
        if args.plot:
            from . import plots

            _, png_path = _out_paths(sc, args.out, "frontier.png")
            plots.plot_frontier(rows, png_path, title=sc.name)
    return EXIT_OK


def _solve_ct_scaled(sc: Scenario):
    """Shared continuous-time solve in the weights' time unit."""
    m, cw, tau = scaled_problem(sc)
    T = sc.weights.time_unit
    n_steps = max(1, int(round(tau / (sc.resolved_ode_step() / T))))
    sol = ct_lqr.solve_ct(m, cw, tau, n_steps=n_steps)
    if sol.blow_up is not None:
        raise ct_lqr.BlowUpError(sol.blow_up.time * T, sol.blow_up.norm)
    traj = ct_lqr.rollout(m, cw, sol)
    return m, cw, tau, sol, traj


def cmd_solve_ct(sc: Scenario, args) -> int:
    T = sc.weights.time_unit
    _, _, _, sol, traj = _solve_ct_scaled(sc)
    predicted = ct_lqr.min_j_identity(sol)
    residual = abs(traj.cost - predicted) / max(abs(traj.cost), 1e-300)
    traj_si = trajectory_to_si(traj, T)
    n_viol, kinds = _constraint_summary(traj_si, sc)
    summary = {
        "command": "solve-ct",
        "scenario": sc.name,
        "time_unit_s": T,
        "cost_scaled_units": traj.cost,
        "min_j_predicted": predicted,
        "min_j_residual_rel": residual,
        "constraint_violations": n_viol,
        "constraint_violation_kinds": kinds,
        "blow_up": False,
        "D_final": float(traj.D[-1]),
        "X_final": traj.X[-1],
        "u_final_si": traj_si.u[-1],
    }
    _write_trajectory_outputs(sc, traj_si, summary, args.out, "ct", args.plot)
    return EXIT_OK


def cmd_solve_dt(sc: Scenario, args) -> int:
    m, cw, tau = scaled_problem(sc)
    T = sc.weights.time_unit
    delta_si = args.delta if args.delta is not None else sc.resolved_delta()
    delta = delta_si / T
    L = max(1, int(round(tau / delta)))
    ds = dt_lqr.exact_discretize(m, cw, delta)
    R = feasibility.build_R(cw, m)
    k = m.K
    Qf = np.zeros((2 * k, 2 * k))
    Qf[k:, k:] = R
    policy = dt_lqr.finite_horizon_policy(ds, None, Qf, L)
    traj = dt_lqr.dt_rollout(ds, policy, None, m, cw)
    if not np.all(np.isfinite(traj.X)):
        bad = np.flatnonzero(~np.isfinite(traj.X).all(axis=1))[0]
        raise ct_lqr.BlowUpError(float(traj.t[bad]) * T, float("inf"))
    traj_si = trajectory_to_si(traj, T)
    n_viol, kinds = _constraint_summary(traj_si, sc)
    summary = {
        "command": "solve-dt",
        "scenario": sc.name,
        "time_unit_s": T,
        "Delta_s": delta_si,
        "steps": policy.L,
        "control_weight_scaled": policy.control_weight,
        "cost_scaled_units": traj.cost,
        "indefinite_S": policy.indefinite,
        "constraint_violations": n_viol,
        "constraint_violation_kinds": kinds,
        "blow_up": False,
        "D_final": float(traj.D[-1]),
        "X_final": traj.X[-1],
        "u_final_si": traj_si.u[-1],
    }
    _write_trajectory_outputs(sc, traj_si, summary, args.out, "dt", args.plot)
    return EXIT_OK


def _require_q(sc: Scenario) -> np.ndarray:
    if sc.weights.q is None:
        raise ScenarioError(
            "weights.q: required for the infinite-horizon modes",
            EXIT_SCHEMA)
    return sc.weights.q


def _cumulative_trapezoid(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[1:] = np.cumsum(0.5 * (x[1:] + x[:-1]) * np.diff(t))
    return out


def cmd_solve_inf(sc: Scenario, args) -> int:
    _require_q(sc)
    m, cw, tau = scaled_problem(sc)
    T = sc.weights.time_unit
    n_steps = max(1, int(round(tau / (sc.resolved_ode_step() / T))))
    k = m.K
    X = None
    per_class = []
    for i in range(k):
        pol = inf_lqr.make_policy(lam=m.lambda_d[i], mu=m.lambda_s[i],
                                  N=m.N[i], u_bar=cw.u_bar[i], q=cw.q[i])
        t, x = inf_lqr.closed_loop_rollout(pol, 0.0, tau, n_steps)
        if X is None:
            X = np.zeros((t.size, k))
            U = np.zeros((t.size, k))
            tt = t
        X[:, i] = x
        U[:, i] = inf_lqr.control_law(pol, x)
        verdict = inf_lqr.bounds_check(pol)
        per_class.append({
            "class": i + 1,
            "p": pol.p,
            "k_offset": pol.k_off,
            "sigma": pol.sigma,
            "alpha": pol.alpha,
            "x_inf": pol.x_inf,
            "u_inf": pol.u_inf,
            "bounds_verdict": verdict.verdict,
            "bounds_failures": list(verdict.failures),
        })
    Xhat = np.zeros_like(X)
    for i in range(k):
        Xhat[:, i] = _cumulative_trapezoid(tt, X[:, i])
    from .model import ControlledTrajectory, delivery_lower_bound

    D = delivery_lower_bound(Xhat, m.lambda_d)
    traj = ControlledTrajectory(t=tt, X=X, Xhat=Xhat, u=U,
                                w=U - cw.u_bar[None, :], D=D)
    traj_si = trajectory_to_si(traj, T)
    n_viol, kinds = _constraint_summary(traj_si, sc)
    summary = {
        "command": "solve-inf",
        "scenario": sc.name,
        "time_unit_s": T,
        "horizon_scaled": tau,
        "classes": per_class,
        "constraint_violations": n_viol,
        "constraint_violation_kinds": kinds,
        "blow_up": False,
    }
    _write_trajectory_outputs(sc, traj_si, summary, args.out, "inf",
                              args.plot)
    return EXIT_OK


def cmd_solve_dt_inf(sc: Scenario, args) -> int:
    _require_q(sc)
    m, cw, tau = scaled_problem(sc)
    T = sc.weights.time_unit
    delta_si = args.delta if args.delta is not None else sc.resolved_delta()
    delta = delta_si / T
    L = max(1, int(round(tau / delta)))
    k = m.K
    t = np.arange(L + 1) * delta
    X = np.zeros((L + 1, k))
    U = np.zeros((L + 1, k))
    per_class = []
    for i in range(k):
        pol = dt_lqr.dt_scalar_policy(lam=m.lambda_d[i], mu=m.lambda_s[i],
                                      N=m.N[i], u_bar=cw.u_bar[i],
                                      q=cw.q[i], Delta=delta)
        z = -pol.N
        for ell in range(L + 1):
            w = -pol.feedback_gain * z - pol.feedforward * pol.n
            X[ell, i] = z + pol.N
            U[ell, i] = pol.u_bar + w
            if ell < L:
                z = pol.g * z + pol.b * w + pol.n
        limits = dt_lqr.small_delta_limits(pol.lam, pol.mu, pol.N,
                                           pol.u_bar, pol.q, delta)
        per_class.append({
            "class": i + 1,
            "S": pol.S,
            "feedback_gain": pol.feedback_gain,
            "feedforward": pol.feedforward,
            "z_inf": pol.z_inf,
            "x_inf": pol.x_inf,
            "u_inf": pol.u_inf,
            "S_Delta": pol.S * delta,
            "p_limit": limits.p,
            "x_inf_limit": limits.x_inf_limit,
        })
    Xhat = np.zeros_like(X)
    for i in range(k):
        Xhat[:, i] = _cumulative_trapezoid(t, X[:, i])
    from .model import ControlledTrajectory, delivery_lower_bound

    D = delivery_lower_bound(Xhat, m.lambda_d)
    traj = ControlledTrajectory(t=t, X=X, Xhat=Xhat, u=U,
                                w=U - cw.u_bar[None, :], D=D)
    traj_si = trajectory_to_si(traj, T)
    n_viol, kinds = _constraint_summary(traj_si, sc)
    summary = {
        "command": "solve-dt-inf",
        "scenario": sc.name,
        "time_unit_s": T,
        "Delta_s": delta_si,
        "steps": L,
        "classes": per_class,
        "constraint_violations": n_viol,
        "constraint_violation_kinds": kinds,
        "blow_up": False,
    }
    _write_trajectory_outputs(sc, traj_si, summary, args.out, "dt_inf",
                              args.plot)
    return EXIT_OK


def _optimal_schedule_si(sc: Scenario, cfg: mc_sim.SimConfig) -> np.ndarray:
    """Sample the continuous-time optimal control on the simulator grid."""
    T = sc.weights.time_unit
    _, _, _, _, traj = _solve_ct_scaled(sc)
    edges = mc_sim.build_grid(cfg)
    starts_scaled = edges[:-1] / T
    k = traj.u.shape[1]
    schedule = np.zeros((starts_scaled.size, k))
    for i in range(k):
        schedule[:, i] = np.interp(starts_scaled, traj.t, traj.u[:, i]) / T
    return schedule


def cmd_simulate(sc: Scenario, args) -> int:
    cfg = sc.sim_config(runs=args.runs, base_seed=args.seed)
    schedule = None if args.uncontrolled else _optimal_schedule_si(sc, cfg)
    ens = mc_sim.monte_carlo(sc.model, schedule, cfg, workers=args.workers)
    report = mc_sim.jensen_report(ens, ens.D)
    k = sc.model.K
    header = (["t"] + [f"meanxi_{i + 1}" for i in range(k)]
              + [f"se_{i + 1}" for i in range(k)]
              + [f"ode_X_{i + 1}" for i in range(k)]
              + ["mean_psi", "D", "cdf_Td"])
    rows = []
    for j in range(ens.t.size):
        rows.append([ens.t[j]] + list(ens.mean_xi[j]) + list(ens.se_xi[j])
                    + list(ens.ode_X[j]) + [ens.mean_psi[j], ens.D[j],
                                            ens.empirical_cdf[j]])
    _, csv_path = _out_paths(sc, args.out, "simulate_ensemble.csv")
    write_csv(csv_path, header, rows)
    delivered = float(np.mean(np.isfinite(ens.T_d)))
    summary = {
        "command": "simulate",
        "scenario": sc.name,
        "uncontrolled": bool(args.uncontrolled),
        "runs": cfg.runs,
        "base_seed": cfg.base_seed,
        "rate_grid_s": cfg.rate_grid,
        "horizon_s": cfg.horizon,
        "delivered_fraction": delivered,
        "mean_psi_final": float(ens.mean_psi[-1]),
        "D_final": float(ens.D[-1]),
        "jensen": {
            "t": report.t,
            "mean_psi": report.mean_psi,
            "D": report.D,
            "difference": report.difference,
            "se": report.se,
            "flags": report.flags,
            "n_flagged": int(np.count_nonzero(report.flags)),
        },
    }
    _, json_path = _out_paths(sc, args.out, "simulate_summary.json")
    write_summary(json_path, summary)
    if args.plot:
        from . import plots

        _, png_path = _out_paths(sc, args.out, "simulate_ensemble.png")
        plots.plot_ensemble(ens, png_path, title=sc.name)
    print(f"{sc.name}: wrote {os.path.basename(csv_path)} and "
          f"{os.path.basename(json_path)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtn-lqr",
        description="Timer-control policies for two-hop relay routing: "
                    "LQ solvers, feasibility frontier, Monte-Carlo "
                    "validation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sweep=False, delta=False, sim=False):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path or bundled scenario name")
        p.add_argument("--out", default=None,
                       help="output directory (default: scenario outputs "
                            "section or current directory)")
        p.add_argument("--plot", action="store_true",
                       help="also render PNG figures")
        if sweep:
            p.add_argument("--sweep", type=_parse_sweep, default=None,
                           help="c1/c3 sweep as lo:hi:step")
        if delta:
            p.add_argument("--delta", type=_parse_delta, default=None,
                           help="discretization step in seconds")
        if sim:
            p.add_argument("--uncontrolled", action="store_true",
                           help="simulate with all timers off")
            p.add_argument("--seed", type=int, default=None,
                           help="override sim.base_seed")
            p.add_argument("--runs", type=int, default=None,
                           help="override sim.runs")
            p.add_argument("--workers", type=int, default=1,
                           help="parallel simulation workers")

    common(sub.add_parser("feasibility",
                          help="R-matrix eigenvalues and PD verdict"),
           sweep=True)
    common(sub.add_parser("sweep", help="feasibility frontier CSV"),
           sweep=True)
    common(sub.add_parser("solve-ct",
                          help="finite-horizon continuous-time solution"))
    common(sub.add_parser("solve-dt",
                          help="finite-horizon discrete-time solution"),
           delta=True)
    common(sub.add_parser("solve-inf",
                          help="infinite-horizon per-class policies"))
    common(sub.add_parser("solve-dt-inf",
                          help="discrete-time infinite-horizon policies"),
           delta=True)
    common(sub.add_parser("simulate", help="Monte-Carlo validation"),
           sim=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep" and args.sweep is None:
        parser.error("sweep requires --sweep lo:hi:step")
    try:
        sc = load_scenario(args.scenario)
        if args.command == "feasibility":
            return cmd_feasibility(sc, args)
        if args.command == "sweep":
            return cmd_feasibility(sc, args, print_report=False)
        if args.command == "solve-ct":
            return cmd_solve_ct(sc, args)
        if args.command == "solve-dt":
            return cmd_solve_dt(sc, args)
        if args.command == "solve-inf":
            return cmd_solve_inf(sc, args)
        if args.command == "solve-dt-inf":
            return cmd_solve_dt_inf(sc, args)
        if args.command == "simulate":
            return cmd_simulate(sc, args)
        parser.error(f"unknown command {args.command}")
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ct_lqr.BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except InfeasibleControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_TIMERS
    except ValueError as exc:
        # bad numeric arguments (negative --delta, zero control weight)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except RuntimeError as exc:
        # backward recursions signal loss of solvability (an S that left
        # the PSD cone, a singular normal matrix) as RuntimeError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
