"""Command-line entry point: ``prefgame {run,solve,sweep,check,reproduce-appendix-d}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checks import SUITES, run_suite
from .config import ConfigError, ExperimentConfig, load_config, load_sweep
from .core import appendix_d_game, uniform_policy
from .dynamics import (
    Algorithm,
    AlgorithmKind,
    DynamicsConfig,
    Trajectory,
    matched_fixed_point,
    run_dynamics,
)
from .solvers import (
    exploitability,
    fixed_point_defect,
    modified_tau,
    solve_ipo_md_fixed_point,
    solve_regularised_nash,
    verify_modified_tau,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
APPENDIX_D_BETAS = (0.0, 0.25, 0.5, 0.75, 1.0)

log = logging.getLogger("prefgame")


# --- output helpers -----------------------------------------------------------


def fmt(x) -> str:
    return "%.17g" % x


def trajectory_header(n: int) -> list[str]:
    return (["step"] + [f"pi_{i}" for i in range(n)]
            + ["population_loss", "nash_residual", "kl_to_ref", "grad_norm"])


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    n = traj.policies.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n))
        for step, pi, loss, res, kl, g in traj.records:
            w.writerow([str(step)] + [fmt(p) for p in pi] + [fmt(loss), fmt(res), fmt(kl), fmt(g)])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a).ravel()]


def stationarity_defect(algorithm: Algorithm, spec, pi, fixed_point) -> float:
    """Sup-norm defect of the algorithm's own fixed-point equation at pi."""
    if algorithm.kind in (AlgorithmKind.OFFLINE_IPO, AlgorithmKind.RLHF_PG):
        return float(np.max(np.abs(pi - fixed_point)))  # explicit targets
    return fixed_point_defect(spec, pi, algorithm.mixture_beta)


def summarise(config: ExperimentConfig, traj: Trajectory) -> dict:
    tol = config.run.tolerance
    final_tv = traj.final_residual
    return {
        "version": __version__,
        "config": config.to_dict(),
        "final_policy": _floats(traj.final_policy),
        "final_residual": final_tv,
        "final_population_loss": float(traj.population_loss[-1]),
        "fixed_point": _floats(traj.fixed_point),
        "converged": bool(not traj.diverged and final_tv <= tol),
        "diverged": traj.diverged,
        "diverged_at": traj.diverged_at,
        "steps_recorded": len(traj),
    }


# --- run ----------------------------------------------------------------------


def execute_run(config: ExperimentConfig, out_dir: Path) -> tuple[dict, Trajectory]:
    """Run one experiment and write its outputs; returns (summary, trajectory)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = config.build_game()
    dyn = config.dynamics_config(spec)
    t0 = time.perf_counter()
    traj = run_dynamics(dyn)
    wall = time.perf_counter() - t0
    summary = summarise(config, traj)
    summary["final_defect"] = stationarity_defect(dyn.algorithm, spec, traj.final_policy, traj.fixed_point)
    if "csv" in config.output.formats:
        write_trajectory_csv(out_dir / "trajectory.csv", traj)
    if "json" in config.output.formats:
        write_json(out_dir / "summary.json", summary)
    # timing varies run to run, so it lives apart from the deterministic outputs
    write_json(out_dir / "timing.json", {"wall_time_s": wall})
    return summary, traj


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if args.tolerance is not None:
        config = _with_tolerance(config, args.tolerance)
    out = Path(args.out or config.output.dir)
    summary, traj = execute_run(config, out)
    log.info("final residual %.3g, converged=%s", summary["final_residual"], summary["converged"])
    if traj.diverged:
        print(f"diverged at step {traj.diverged_at}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _with_tolerance(config: ExperimentConfig, tol: float) -> ExperimentConfig:
    out = replace(config, run=replace(config.run, tolerance=tol))
    out.validate()
    return out


# --- solve --------------------------------------------------------------------


def solve_report(config: ExperimentConfig, tol: float = 1e-12) -> dict:
    spec = config.build_game()
    rep = solve_regularised_nash(spec, tol=tol)
    result = {
        "nash_policy": _floats(rep.policy),
        "residual": rep.residual,
        "exploitability": exploitability(spec, rep.policy),
        "iterations": rep.iterations,
        "converged": rep.converged,
    }
    beta = config.algo.beta
    if beta is not None:
        md = solve_ipo_md_fixed_point(spec, beta, tol=tol)
        entry = {"beta": beta, "policy": _floats(md.policy), "residual": md.residual,
                 "iterations": md.iterations, "converged": md.converged}
        if beta < 1.0:
            entry["modified_tau"] = modified_tau(spec.tau, beta)
            entry["modified_tau_nash_defect"] = verify_modified_tau(spec, beta, md.policy)
        result["ipo_md"] = entry
    return result


def cmd_solve(args) -> int:
    config = load_config(args.config)
    result = solve_report(config, args.tolerance or 1e-12)
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "solve.json", result)
    ok = result["converged"] and result.get("ipo_md", {}).get("converged", True)
    return EXIT_OK if ok else EXIT_DIVERGED


# --- sweep --------------------------------------------------------------------

SWEEP_COLUMNS = ("cell", "tau", "beta", "learning_rate", "seed", "final_residual",
                 "final_loss", "converged", "tv_to_fixed_point", "error")


def _sweep_cell(job):
    index, base_dict, axes, out_dir = job
    row = {"cell": index, "error": ""}
    try:
        config = ExperimentConfig.from_dict(base_dict).with_overrides(**axes)
        row.update(tau=config.game.tau, beta=config.algo.beta,
                   learning_rate=config.algo.learning_rate, seed=config.run.seed)
        summary, traj = execute_run(config, Path(out_dir) / f"cell_{index:05d}")
        row.update(final_residual=summary["final_defect"],
                   final_loss=summary["final_population_loss"],
                   converged=summary["converged"],
                   tv_to_fixed_point=summary["final_residual"])
        if traj.diverged:
            row["error"] = f"diverged at step {traj.diverged_at}"
    except Exception as exc:  # recorded per cell; the sweep carries on
        row.update({k: v for k, v in axes.items()})
        row["converged"] = False
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return fmt(value)
    return str(value)


def cmd_sweep(args) -> int:
    sweep = load_sweep(args.config)
    if args.seed is not None:
        sweep = type(sweep)(sweep.base.with_overrides(seed=args.seed), sweep.axes, sweep.max_cells)
    out = Path(args.out or sweep.base.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    base = sweep.base.to_dict()
    jobs = [(i, base, axes, str(out)) for i, axes in enumerate(sweep.cells())]
    workers = args.workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        rows = [_sweep_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_cell, jobs))  # map preserves cell order
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in SWEEP_COLUMNS])
    failed = sum(bool(r["error"]) or not r.get("converged", False) for r in rows)
    log.info("%d of %d cells did not converge", failed, len(rows))
    if all(r["error"] for r in rows):
        print("every sweep cell failed", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# --- check --------------------------------------------------------------------


def cmd_check(args) -> int:
    report = run_suite(args.suite, seed=args.seed or 0)
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "check.json", report)
    return EXIT_OK if report["passed"] else EXIT_CHECK


# --- 3-action cyclic example ------------------------------------------------


def appendix_d_runs(betas=APPENDIX_D_BETAS) -> list[tuple[str, Algorithm]]:
    runs = [("offline_ipo", Algorithm.offline_ipo(uniform_policy(3))),
            ("online_ipo", Algorithm.online_ipo())]
    runs += [(f"ipo_md_beta_{b:g}", Algorithm.ipo_md(b)) for b in betas]
    return runs


def _appendix_d_job(job):
    label, algorithm, tau, steps, lr, record_every, seed, out_dir = job
    spec = appendix_d_game(tau)
    fp = matched_fixed_point(algorithm, spec)
    traj = run_dynamics(DynamicsConfig(algorithm, spec, learning_rate=lr, steps=steps, seed=seed,
                                       record_every=record_every), fixed_point=fp)
    write_trajectory_csv(Path(out_dir) / f"{label}.csv", traj)
    return {
        "run": label,
        "algorithm": algorithm.kind.value,
        "beta": algorithm.beta,
        "endpoint": _floats(traj.final_policy),
        "fixed_point": _floats(fp),
        "tv_to_fixed_point": traj.final_residual,
        "fixed_point_defect": stationarity_defect(algorithm, spec, traj.final_policy, fp),
        "diverged": traj.diverged,
        "diverged_at": traj.diverged_at,
    }


def reproduce_appendix_d(out_dir: Path, *, steps: int = 10**5, learning_rate: float = 0.1,
                         tau: float = 0.1, betas=APPENDIX_D_BETAS, record_every: int = 100,
                         tolerance: float = 1e-4, seed: int = 0, workers: int = 1) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(label, algo, tau, steps, learning_rate, record_every, seed, str(out_dir))
            for label, algo in appendix_d_runs(betas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_appendix_d_job, jobs))
    else:
        results = [_appendix_d_job(j) for j in jobs]
    for r in results:
        r["converged"] = bool(not r["diverged"] and r["tv_to_fixed_point"] <= tolerance)
    with open(out_dir / "fixed_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "beta", "pi_0", "pi_1", "pi_2", "endpoint_tv", "converged"])
        for r in results:
            w.writerow([r["run"], _cell(r["beta"])] + [fmt(p) for p in r["fixed_point"]]
                       + [fmt(r["tv_to_fixed_point"]), _cell(r["converged"])])
    summary = {"version": __version__, "tau": tau, "steps": steps, "learning_rate": learning_rate,
               "tolerance": tolerance, "runs": results}
    write_json(out_dir / "summary.json", summary)
    return summary


def cmd_reproduce_appendix_d(args) -> int:
    summary = reproduce_appendix_d(
        Path(args.out or "appendix_d"), steps=args.steps, learning_rate=args.learning_rate,
        betas=tuple(args.betas), tolerance=args.tolerance or 1e-4, seed=args.seed or 0,
        workers=args.workers or os.cpu_count() or 1)
    for r in summary["runs"]:
        print(f"{r['run']:>18}  tv={r['tv_to_fixed_point']:.3e}  converged={r['converged']}")
    return EXIT_DIVERGED if any(r["diverged"] for r in summary["runs"]) else EXIT_OK


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefgame", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--tolerance", type=float)
        return p

    common(sub.add_parser("run", help="run one experiment")).set_defaults(func=cmd_run)
    common(sub.add_parser("solve", help="solve for the regularised Nash")).set_defaults(func=cmd_solve)
    common(sub.add_parser("sweep", help="run a grid of experiments")).set_defaults(func=cmd_sweep)
    p = common(sub.add_parser("check", help="run self-check suites"), config=False)
    p.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    p.set_defaults(func=cmd_check)
    p = common(sub.add_parser("reproduce-appendix-d", help="IPO variants on the 3-action example"),
               config=False)
    p.add_argument("--steps", type=int, default=10**5)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--betas", type=float, nargs="+", default=list(APPENDIX_D_BETAS))
    p.set_defaults(func=cmd_reproduce_appendix_d)
    return parser


def configure_logging() -> None:
    level = os.environ.get("PREFGAME_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigError("PREFGAME_LOG", f"must be one of {', '.join(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
