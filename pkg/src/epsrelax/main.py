from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from epsrelax.core.config import (
    Problem,
    RunConfig,
    build_cost,
    build_direction,
    build_problem,
    check_epsilons,
    parse_epsilon_list,
    solver_options,
)
from epsrelax.core.errors import AuditFailed, ConfigError, EpsRelaxError, InsufficientDecay
from epsrelax.dynamics.filippov import audit_differentiability, integrate_filippov
from epsrelax.dynamics.smooth import integrate_smooth
from epsrelax.dynamics.system import RegularizedField
from epsrelax.models.hopper import contact_phases
from epsrelax.optimization.master import master_algorithm
from epsrelax.optimization.projected_gradient import solve_fixed_epsilon
from epsrelax.persistence import artifacts
from epsrelax.studies.rates import (
    BOUNDEDNESS_EPSILONS,
    DEFAULT_EPSILONS,
    derivative_rate_study,
    gradient_boundedness_study,
    trajectory_rate_study,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERDICT = 4


def _load(config: str) -> tuple[dict, Problem]:
    cfg = RunConfig(config).load()
    return cfg, build_problem(cfg)


def _replay_step(cfg: dict, problem: Problem) -> float:
    step_h = cfg["simulation"]["step_h"]
    return float(step_h) if step_h else problem.T / (problem.N - 1)


def _filippov(cfg: dict, problem: Problem, xi=None):
    sim = cfg["simulation"]
    return integrate_filippov(
        problem.system,
        xi if xi is not None else problem.xi,
        problem.T,
        _replay_step(cfg, problem),
        float(sim["guard_tol"]),
        int(sim["event_cap"]),
    )


def _write_trajectory(traj, out: Path, with_phases: bool) -> None:
    artifacts.write_trajectory_csv(traj, out)
    artifacts.write_events_json(traj, artifacts.sidecar_path(out, "events"))
    if with_phases:
        artifacts.write_phases_json(contact_phases(traj), artifacts.sidecar_path(out, "phases"))


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg, problem = _load(args.config)
    if args.mode == "filippov":
        traj = _filippov(cfg, problem)
    else:
        eps = check_epsilons([args.epsilon if args.epsilon is not None else cfg["epsilon"]], "epsilon")[0]
        field = RegularizedField(problem.system, problem.phi, eps)
        traj = integrate_smooth(field, problem.xi, problem.T, problem.N, problem.scheme)
    out = Path(args.out)
    _write_trajectory(traj, out, with_phases=problem.task is not None)
    logger.info("Wrote %d samples and %d events to %s", len(traj.times), len(traj.events), out)
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg, problem = _load(args.config)
    cost = build_cost(cfg, problem)
    opts = solver_options(cfg)

    if args.schedule is not None:
        cfg["schedule"] = parse_epsilon_list(args.schedule)
    elif args.epsilon is not None:
        cfg["epsilon"] = float(args.epsilon)
        cfg["schedule"] = None

    if cfg["schedule"]:
        cfg["schedule"] = check_epsilons(cfg["schedule"], "schedule")
        report = master_algorithm(
            problem.system, problem.xi, cost, problem.T, problem.N, cfg["schedule"],
            phi=problem.phi, opts=opts, audit_step_h=_replay_step(cfg, problem),
            guard_tol=float(cfg["simulation"]["guard_tol"]),
        )
        eps = float(cfg["schedule"][-1])
    else:
        eps = check_epsilons([cfg["epsilon"]], "epsilon")[0]
        field = RegularizedField(problem.system, problem.phi, eps)
        report = solve_fixed_epsilon(field, problem.xi, cost, problem.T, problem.N, opts)
    report.config = cfg

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(report.to_dict(), out_dir / "report.json")
    (out_dir / "summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
    artifacts.write_input_csv(report.xi, problem.T, out_dir / "input.csv")

    field = RegularizedField(problem.system, problem.phi, eps)
    smoothed = integrate_smooth(field, report.xi, problem.T, problem.N, problem.scheme)
    _write_trajectory(smoothed, out_dir / "smoothed.csv", with_phases=False)

    replay = _filippov(cfg, problem, report.xi)
    _write_trajectory(replay, out_dir / "replay.csv", with_phases=True)
    audit = report.audit
    if audit is None:
        audit = audit_differentiability(replay, problem.system, 2.0 * problem.T / (problem.N - 1))
    artifacts.write_json(audit.as_dict(), out_dir / "audit.json")

    print(report.summary())
    # Artifacts are on disk; a failed line search still ends the run with an error.
    report.raise_for_status()
    return EXIT_OK


def cmd_converge(args: argparse.Namespace) -> int:
    cfg, problem = _load(args.config)
    study_cfg = cfg["study"]
    if args.epsilons is not None:
        study_cfg["epsilons"] = parse_epsilon_list(args.epsilons)
    default_eps = BOUNDEDNESS_EPSILONS if args.study == "boundedness" else DEFAULT_EPSILONS
    epsilons = check_epsilons(study_cfg["epsilons"] or list(default_eps), "study.epsilons")
    if args.study != "boundedness" and len(epsilons) < 2:
        raise ConfigError(f"A {args.study} rate study needs at least two epsilons (got {epsilons})")
    workers = int(study_cfg["workers"])
    out = Path(args.out)
    verdict_path = out.with_suffix(".json")

    try:
        if args.study == "trajectory":
            result = trajectory_rate_study(
                problem.system, problem.xi, problem.T, epsilons,
                slope_window=tuple(study_cfg["slope_window"]), phi=problem.phi,
                metric=study_cfg["metric"], grid_ratio=float(study_cfg["grid_ratio"]),
                guard_tol=float(cfg["simulation"]["guard_tol"]),
                noise_floor=float(study_cfg["noise_floor"]), workers=workers,
            )
            passed = result.passed
        elif args.study == "derivative":
            result = derivative_rate_study(
                problem.system, problem.xi, build_direction(cfg, problem.xi), build_cost(cfg, problem),
                problem.T, epsilons, slope_window=tuple(study_cfg["slope_window"]), phi=problem.phi,
                grid_ratio=float(study_cfg["grid_ratio"]), guard_tol=float(cfg["simulation"]["guard_tol"]),
                reference_divisor=float(study_cfg["reference_divisor"]),
                noise_floor=float(study_cfg["noise_floor"]), workers=workers,
            )
            passed = result.passed
        else:
            result = gradient_boundedness_study(
                problem.system, problem.xi, build_cost(cfg, problem), problem.T, epsilons,
                ratio_cap=float(study_cfg["ratio_cap"]), phi=problem.phi,
                direction=build_direction(cfg, problem.xi), grid_ratio=float(study_cfg["grid_ratio"]),
                workers=workers,
            )
            passed = result.bounded
    except (InsufficientDecay, AuditFailed) as exc:
        artifacts.write_json(
            {"study": args.study, "pass": False, "error": type(exc).__name__, "message": str(exc), "config": cfg},
            verdict_path,
        )
        print(f"{args.study} study: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERDICT

    artifacts.write_table_csv(result.to_frame(), out)
    artifacts.write_json({**result.verdict_dict(), "config": cfg}, verdict_path)
    print(f"{args.study} study: {'pass' if passed else 'FAIL'} ({verdict_path})")
    return EXIT_OK if passed else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epsrelax",
        description="Optimal control of bimodal piecewise-smooth systems by epsilon-relaxation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate Filippov or smoothed dynamics")
    sim.add_argument("config", help="config JSON path or bundled config name")
    sim.add_argument("--mode", choices=["filippov", "smooth"], default="filippov")
    sim.add_argument("--epsilon", type=float, default=None)
    sim.add_argument("--out", required=True, help="trajectory CSV path")
    sim.set_defaults(func=cmd_simulate)

    opt = sub.add_parser("optimize", help="fixed-epsilon solve or epsilon-reduction master algorithm")
    opt.add_argument("config")
    group = opt.add_mutually_exclusive_group()
    group.add_argument("--epsilon", type=float, default=None)
    group.add_argument("--schedule", default=None, help="comma-separated decreasing epsilons")
    opt.add_argument("--out-dir", required=True)
    opt.set_defaults(func=cmd_optimize)

    conv = sub.add_parser("converge", help="empirical rate and boundedness studies")
    conv.add_argument("config")
    conv.add_argument("--study", choices=["trajectory", "derivative", "boundedness"], required=True)
    conv.add_argument("--epsilons", default=None, help="comma-separated decreasing epsilons")
    conv.add_argument("--out", required=True, help="table CSV path; the verdict goes next to it as .json")
    conv.set_defaults(func=cmd_converge)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"Config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EpsRelaxError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
