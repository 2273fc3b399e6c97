"""Command-line entry point: ``impact-hedge <command> ...``.

Exit codes: 0 success, 1 domain error or failed study cell, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence, TextIO

from impact_hedge.dual import ControlSpec, contact_diagnostic, dual_sweep, dual_value
from impact_hedge.events import JsonlEmitter, JsonlEventLog, NullEmitter, SolverEventEmitter
from impact_hedge.experiments import run_study
from impact_hedge.facelift import face_lift, face_lift_eps
from impact_hedge.hedge import asymptotic_hedge, exact_hedge
from impact_hedge.model import build_model
from impact_hedge.numerics import SpaceTimeGrid
from impact_hedge.pde import solve_hjb
from impact_hedge.reporting import (
    canonical_json,
    config_hash,
    emit_rows,
    surface_rows,
    write_json,
    write_rows,
)
from impact_hedge.schema import (
    ImpactHedgeError,
    RootConfig,
    SchemaError,
    UsageError,
    default_config,
    parse_config,
    parse_study_config,
)

SWEEP_SCALES = (0.75, 1.0, 1.25)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impact-hedge",
        description="Price and hedge covered options under market impact.",
    )
    parser.add_argument("--events", type=Path, help="Append run events to this JSONL file.")
    commands = parser.add_subparsers(dest="command", required=True)

    price = commands.add_parser("price", help="Solve the gamma-constrained pricing equation.")
    price.add_argument("--config", type=Path, required=True)
    price.add_argument("--surface-csv", type=Path, help="Write t, x, v, dxx, s_hat rows.")

    lift = commands.add_parser("facelift", help="Tabulate the face-lifted payoff.")
    lift.add_argument("--config", type=Path, required=True)
    lift.add_argument("--eps", type=float, help="Use the F-level bound 1/eps instead of bar_gamma.")
    lift.add_argument("--output", type=Path, help="CSV path; standard output when omitted.")

    dual = commands.add_parser("dual", help="Monte Carlo value of the dual control problem.")
    dual.add_argument("--config", type=Path, required=True)
    dual.add_argument("--paths", type=int)
    dual.add_argument("--steps", type=int)
    dual.add_argument("--seed", type=int)
    dual.add_argument("--control", default="optimal", help="optimal | const:<s> | sweep")

    hedge = commands.add_parser("hedge", help="Simulate a replication strategy.")
    hedge.add_argument("--config", type=Path, required=True)
    hedge.add_argument("--strategy", default="exact", help="exact | asymptotic:<eps>")
    hedge.add_argument("--paths", type=int)
    hedge.add_argument("--steps", type=int)
    hedge.add_argument("--seed", type=int)
    hedge.add_argument("--paths-csv", type=Path, help="Write per-path terminal errors.")

    study = commands.add_parser("study", help="Cross-validation studies.")
    study_commands = study.add_subparsers(dest="study_command", required=True)
    study_run = study_commands.add_parser("run", help="Run the study described by a config file.")
    study_run.add_argument("path", type=Path)

    config = commands.add_parser("config", help="Inspect configuration.")
    config_commands = config.add_subparsers(dest="config_command", required=True)
    config_commands.add_parser("print-defaults", help="Print the root config with every default.")
    validate = config_commands.add_parser("validate", help="Validate a root config file.")
    validate.add_argument("path", type=Path)
    return parser


def _positive(value: int | None, name: str) -> int | None:
    if value is not None and value < 1:
        raise UsageError(f"--{name} must be at least 1, got {value}")
    return value


def _parse_level(text: str, prefix: str) -> float:
    try:
        value = float(text[len(prefix):])
    except ValueError as exc:
        raise UsageError(f"cannot parse '{text}': expected {prefix}<number>") from exc
    if value < 0.0:
        raise UsageError(f"'{text}' must be non-negative")
    return value


def _setup(config: RootConfig):
    return build_model(config.model), SpaceTimeGrid.from_config(config.grid)


def _cmd_price(args: argparse.Namespace, emitter: SolverEventEmitter, out: TextIO) -> int:
    config = parse_config(args.config)
    model, grid = _setup(config)
    terminal = face_lift(config.payoff, model, grid).g_hat_values
    solution = solve_hjb(model, terminal, grid, config.solver, emitter=emitter)
    if args.surface_csv is not None:
        rows = surface_rows(grid, v=solution.values, dxx=solution.dxx_values, s_hat=solution.control_field)
        write_rows(args.surface_csv, rows, ["t", "x", "v", "dxx", "s_hat"])
    result = {
        "price": solution.price_at(config.spot),
        "spot": config.spot,
        "iterations": solution.total_iterations,
        "residual_sup": solution.residual_sup,
        "gamma_margin": solution.gamma_margin,
        "config_hash": config_hash(config),
    }
    out.write(canonical_json(result) + "\n")
    return 0


def _cmd_facelift(args: argparse.Namespace, emitter: SolverEventEmitter, out: TextIO) -> int:
    config = parse_config(args.config)
    model, grid = _setup(config)
    if args.eps is None:
        result = face_lift(config.payoff, model, grid)
    else:
        if args.eps <= 0.0:
            raise UsageError(f"--eps must be positive, got {args.eps}")
        result = face_lift_eps(config.payoff, model, grid, args.eps)
    columns = ["x", "g", "g_hat", "gamma_bound", "contact"]
    if args.output is not None:
        write_rows(args.output, result.rows(), columns)
    else:
        emit_rows(out, result.rows(), columns)
    return 0


def _cmd_dual(args: argparse.Namespace, emitter: SolverEventEmitter, out: TextIO) -> int:
    config = parse_config(args.config)
    model, grid = _setup(config)
    n_paths = _positive(args.paths, "paths") or config.mc.n_paths
    n_steps = _positive(args.steps, "steps") or config.mc.n_steps
    seed = config.mc.seed if args.seed is None else args.seed
    if seed < 0:
        raise UsageError(f"--seed must be non-negative, got {seed}")
    level = None
    if args.control.startswith("const:"):
        level = _parse_level(args.control, "const:")
    elif args.control not in ("optimal", "sweep"):
        raise UsageError(f"unknown control '{args.control}': expected optimal, const:<s> or sweep")
    lifted = face_lift(config.payoff, model, grid)
    solution = solve_hjb(model, lifted.g_hat_values, grid, config.solver, emitter=emitter)
    price = solution.price_at(config.spot)
    reference_vol = float(model.base_vol(grid.t_start, config.spot))

    if args.control == "sweep":
        controls = [ControlSpec.markov_from_pde(solution)] + [
            ControlSpec.constant(scale * reference_vol) for scale in SWEEP_SCALES
        ]
        table = dual_sweep(controls, lifted.g_hat_values, model, grid, config.spot, n_paths, seed,
                           pde_price=price, n_steps=n_steps, block_size=config.mc.block_size, emitter=emitter)
        out.write(canonical_json(table) + "\n")
        return 0

    control = ControlSpec.markov_from_pde(solution) if level is None else ControlSpec.constant(level)
    result = dual_value(control, lifted.g_hat_values, model, grid, config.spot, n_paths, seed,
                        raw_payoff=lifted.g_values, n_steps=n_steps, block_size=config.mc.block_size,
                        emitter=emitter)
    payload = {
        "result": result,
        "pde_price": price,
        "contact": contact_diagnostic(result),
    }
    out.write(canonical_json(payload) + "\n")
    return 0


def _cmd_hedge(args: argparse.Namespace, emitter: SolverEventEmitter, out: TextIO) -> int:
    config = parse_config(args.config)
    model, grid = _setup(config)
    n_paths = _positive(args.paths, "paths") or config.mc.n_paths
    n_steps = _positive(args.steps, "steps") or config.mc.n_steps
    seed = config.mc.seed if args.seed is None else args.seed
    if seed < 0:
        raise UsageError(f"--seed must be non-negative, got {seed}")
    if args.strategy == "exact":
        report = exact_hedge(model, config.payoff, grid, n_paths, n_steps, seed, x0=config.spot,
                             options=config.solver, block_size=config.mc.block_size, emitter=emitter)
    elif args.strategy.startswith("asymptotic:"):
        eps = _parse_level(args.strategy, "asymptotic:")
        report = asymptotic_hedge(model, config.payoff, grid, eps, n_paths, n_steps, seed, x0=config.spot,
                                  delta_cap_ratio=config.solver.delta_cap_ratio,
                                  block_size=config.mc.block_size, emitter=emitter)
    else:
        raise UsageError(f"unknown strategy '{args.strategy}': expected exact or asymptotic:<eps>")
    if args.paths_csv is not None:
        rows = [{"path": k, "terminal_error": float(e)} for k, e in enumerate(report.terminal_errors)]
        write_rows(args.paths_csv, rows, ["path", "terminal_error"])
    out.write(canonical_json(report.summary()) + "\n")
    return 0


def _cmd_study(args: argparse.Namespace, emitter: SolverEventEmitter, out: TextIO) -> int:
    study = parse_study_config(args.path)
    report = run_study(study, emitter)
    write_json(Path(study.report_path), report)
    if study.table_path is not None:
        for name, rows in report.tables.items():
            if rows:
                target = Path(study.table_path)
                path = target.with_name(f"{target.stem}_{name}{target.suffix or '.csv'}")
                write_rows(path, rows, sorted(rows[0]))
    out.write(canonical_json({"study": report.study, "passed": report.passed,
                              "report_path": study.report_path}) + "\n")
    return 0 if report.passed else 1


def _cmd_config(args: argparse.Namespace, emitter: SolverEventEmitter, out: TextIO) -> int:
    if args.config_command == "print-defaults":
        out.write(canonical_json(default_config().model_dump(mode="json")) + "\n")
        return 0
    config = parse_config(args.path)
    out.write(canonical_json({"valid": True, "config_hash": config_hash(config)}) + "\n")
    return 0


COMMANDS = {
    "price": _cmd_price,
    "facelift": _cmd_facelift,
    "dual": _cmd_dual,
    "hedge": _cmd_hedge,
    "study": _cmd_study,
    "config": _cmd_config,
}


def dispatch(argv: Sequence[str], out: TextIO | None = None, err: TextIO | None = None) -> int:
    """Run one command; returns the process exit code."""
    stdout = out or sys.stdout
    stderr = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)

    emitter: SolverEventEmitter = NullEmitter()
    if args.events is not None:
        emitter = JsonlEmitter(JsonlEventLog(args.events))
    try:
        return COMMANDS[args.command](args, emitter, stdout)
    except UsageError as exc:
        stderr.write(f"usage error: {exc}\n")
        return 2
    except SchemaError as exc:
        for issue in exc.issues:
            stderr.write(f"{issue.path}: {issue.message}\n")
        return 1
    except ImpactHedgeError as exc:
        stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
