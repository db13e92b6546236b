"""Command-line orchestration.

Every command reads one config file and writes deterministic CSV to ``--out``
(standard output by default); human-readable summaries go to standard error.
Exit codes: 0 success, 1 analysis failure (a check failed or a validity
hypothesis broke), 2 configuration error, 3 runtime numeric error.  Every
error path prints a single machine-parsable line ``ERROR <code>: <message>``
to standard error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dsl
from .approximate import frozen_predict, retarded_predict, sweep_t0
from .config import RunConfig, load_config
from .core import (
    Trajectory,
    format_float,
    interpolate_state,
    read_trajectory_csv,
    trajectory_csv_text,
)
from .decompose import coupling_residual, feedback_jacobian_at_zero, virtual_decompose
from .errors import ConfigError, LacedGamesError
from .lacing import check_lacing_rank, conservation_report, evaluate_integrals, reconstruct_trajectory
from .simulate import simulate

__all__ = ["main", "console"]


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _load_truth(cfg: RunConfig, path: str | None) -> Trajectory:
    if not path:
        raise ConfigError("this command needs --trajectory PATH")
    traj = read_trajectory_csv(path, cfg.analysis.derivative_source)
    if traj.m != cfg.game.m or traj.n != cfg.game.n:
        raise ConfigError(
            f"{path}: trajectory dimensions (m={traj.m}, n={traj.n}) do not match "
            f"the configured game (m={cfg.game.m}, n={cfg.game.n})"
        )
    return traj


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    step, t_end = cfg.require_sim()
    traj = simulate(cfg.game, cfg.schedule, t_end, step)
    _emit(trajectory_csv_text(traj), args.out)
    _info(f"simulated {len(traj)} samples over [0, {t_end}]")
    return 0


def _rank_env(iset, traj: Trajectory, sample: int) -> dsl.EvalEnv:
    if not 0 <= sample < len(traj):
        raise ConfigError(f"analysis.rank_sample {sample} out of range for {len(traj)} samples")
    if traj.u_interactive is None:
        raise ConfigError("trajectory has no interactive-control columns")
    n = traj.n
    u = traj.u_interactive[sample]
    return dsl.EvalEnv(
        t=float(traj.times[sample]),
        phi=traj.phi[sample],
        dphi=traj.dphi[sample],
        u1=u[:n],
        u2=u[n:],
        u1o=traj.u_pure[sample][:n],
        u2o=traj.u_pure[sample][n:],
        k=iset.constants,
    )


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    truth = _load_truth(cfg, args.trajectory)
    iset = cfg.integrals_for(truth)
    values = evaluate_integrals(iset, truth)
    rows = conservation_report(values, iset.constants, cfg.analysis.conservation_tol)
    rank = check_lacing_rank(iset, _rank_env(iset, truth, cfg.analysis.rank_sample), cfg.analysis.fd_eps)

    lines = ["alpha,max_drift,pass"]
    for row in rows:
        lines.append(f"{row.alpha},{format_float(row.max_drift)},{'true' if row.passed else 'false'}")
    lines.append("")
    lines.append("determinant,condition,degenerate")
    lines.append(
        f"{format_float(rank.determinant)},{format_float(rank.condition)},"
        f"{'true' if rank.degenerate else 'false'}"
    )
    _emit("\n".join(lines) + "\n", args.out)

    for row in rows:
        _info(
            f"integral {row.alpha}: max drift {row.max_drift:.3e} "
            f"({'pass' if row.passed else 'FAIL'} at tol {cfg.analysis.conservation_tol:.1e})"
        )
    _info(
        f"control Jacobian: det {rank.determinant:.6g}, condition {rank.condition:.3e}"
        f"{' — DEGENERATE' if rank.degenerate else ''}"
    )
    return 0 if all(r.passed for r in rows) and not rank.degenerate else 1


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    truth = _load_truth(cfg, args.trajectory)
    iset = cfg.integrals_for(truth)
    result = reconstruct_trajectory(iset, truth)
    _emit(trajectory_csv_text(result.trajectory), args.out)
    _info(
        f"reconstructed {len(result.trajectory)} samples; Newton iterations "
        f"max {int(result.iterations.max())}, residual max {result.residuals.max():.3e}"
    )
    return 0


def cmd_decompose(args) -> int:
    cfg = load_config(args.config)
    if cfg.constants_mode == "measure_at_start":
        truth = _load_truth(cfg, args.trajectory)
        iset = cfg.integrals_for(truth)
    else:
        iset = cfg.require_integrals()
    base_phi, base_dphi = cfg.base_point()
    jac = feedback_jacobian_at_zero(iset, base_phi, base_dphi, cfg.analysis.fd_eps)
    dmap = virtual_decompose(jac, base_phi, base_dphi)

    size = 2 * iset.n
    lines = ["eigen_index,eigenvalue," + ",".join(f"forward_{j}" for j in range(size))]
    for i in range(size):
        lines.append(
            f"{i},{format_float(dmap.eigenvalues[i])},"
            + ",".join(format_float(v) for v in dmap.forward[i])
        )
    if cfg.analysis.radii:
        lines.append("")
        lines.append("radius,residual")
        for radius in cfg.analysis.radii:
            residual = coupling_residual(iset, dmap, radius, cfg.analysis.sphere_grid)
            lines.append(f"{format_float(radius)},{format_float(residual)}")
    _emit("\n".join(lines) + "\n", args.out)
    _info(f"eigenvalues: {', '.join(f'{v:.6g}' for v in dmap.eigenvalues)}")
    return 0


def _prediction_csv(run, truth: Trajectory) -> str:
    pred = run.predicted
    m, n = pred.m, pred.n
    header = (
        ["t"]
        + [f"phi_{i}" for i in range(m)]
        + [f"dphi_{i}" for i in range(m)]
        + [f"u1o_{j}" for j in range(n)]
        + [f"u2o_{j}" for j in range(n)]
        + [f"u1_{j}" for j in range(n)]
        + [f"u2_{j}" for j in range(n)]
        + [f"pred_phi_{i}" for i in range(m)]
    )
    lines = [",".join(header)]
    for i, t in enumerate(pred.times):
        truth_phi, truth_dphi = interpolate_state(truth, float(t))
        row = [t, *truth_phi, *truth_dphi, *pred.u_pure[i], *pred.u_interactive[i], *pred.phi[i]]
        lines.append(",".join(format_float(x) for x in row))
    return "\n".join(lines) + "\n"


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    if cfg.approx is None:
        raise ConfigError("missing required section approx")
    truth = _load_truth(cfg, args.trajectory)
    iset = cfg.integrals_for(truth)
    step = cfg.approx.step if cfg.approx.step is not None else cfg.sim_step
    if step is None:
        raise ConfigError("missing required key approx.step (or sim.step)")
    if cfg.approx.kind == "frozen":
        run = frozen_predict(
            iset, cfg.game.dynamics, truth, cfg.approx.t0, cfg.approx.horizon, step, cfg.schedule
        )
    else:
        run = retarded_predict(
            iset,
            cfg.game.dynamics,
            truth,
            cfg.approx.t0,
            cfg.approx.delta_t,
            cfg.approx.horizon,
            step,
            cfg.schedule,
        )
    _emit(_prediction_csv(run, truth), args.out)
    _info(
        f"{run.kind} prediction from t0={run.t0}: l_inf {run.l_inf:.6e}, l2 {run.l2:.6e}"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.sweep is None:
        raise ConfigError("missing required section sweep")
    truth = _load_truth(cfg, args.trajectory)
    iset = cfg.integrals_for(truth)
    step = cfg.sweep.step if cfg.sweep.step is not None else cfg.sim_step
    if step is None:
        raise ConfigError("missing required key sweep.step (or sim.step)")
    result = sweep_t0(
        iset,
        cfg.game.dynamics,
        truth,
        cfg.sweep.t0_values,
        cfg.sweep.kind,
        cfg.sweep.delta_t,
        cfg.sweep.horizon,
        step,
        cfg.schedule,
    )
    lines = ["t0,kind,delta_t,l_inf,l2"]
    for t0, run in zip(result.t0_values, result.runs):
        if run is None:
            lines.append(f"{format_float(t0)},{cfg.sweep.kind},{format_float(cfg.sweep.delta_t)},nan,nan")
        else:
            lines.append(
                f"{format_float(run.t0)},{run.kind},{format_float(run.delta_t)},"
                f"{format_float(run.l_inf)},{format_float(run.l2)}"
            )
    lines.append("")
    lines.append("t0," + ",".join(format_float(t) for t in result.t0_values))
    for t0, row in zip(result.t0_values, result.correlations):
        cells = ["undefined" if r is None else format_float(r) for r in row]
        lines.append(format_float(t0) + "," + ",".join(cells))
    _emit("\n".join(lines) + "\n", args.out)
    for idx, message in sorted(result.failures.items()):
        _info(f"t0={result.t0_values[idx]}: FAILED — {message}")
    _info(f"swept {len(result.t0_values)} start times, {len(result.failures)} failures")
    return 0 if not result.failures else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lacedgames",
        description="Simulate and analyze two-player games with hidden feedback couplings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("simulate", cmd_simulate, False, "integrate the game and write a trajectory CSV"),
        ("check", cmd_check, True, "conservation and independence checks on a trajectory"),
        ("reconstruct", cmd_reconstruct, True, "fill in the interactive controls a posteriori"),
        ("decompose", cmd_decompose, False, "virtual-player decomposition at the base point"),
        ("predict", cmd_predict, True, "frozen or retarded approximating-game prediction"),
        ("sweep", cmd_sweep, True, "prediction sweep over start times with error correlations"),
    ]
    for name, func, needs_traj, help_text in specs:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the TOML config file")
        cmd.add_argument("--out", default=None, help="output CSV path (default: stdout)")
        cmd.add_argument(
            "--trajectory",
            default=None,
            help="trajectory CSV input" + ("" if needs_traj else " (optional)"),
        )
        cmd.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LacedGamesError as exc:
        message = " ".join(str(exc).split())
        print(f"ERROR {exc.exit_code}: {message}", file=sys.stderr)
        return exc.exit_code
    except (ArithmeticError, ValueError, IndexError) as exc:
        message = " ".join(str(exc).split())
        print(f"ERROR 3: {type(exc).__name__}: {message}", file=sys.stderr)
        return 3


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console()
