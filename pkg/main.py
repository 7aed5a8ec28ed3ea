"""
Command-line entry point for the fiber solver.

    python main.py simulate --config scenario.json --out results/
    python main.py study --config study.json --kind convergence --out results/
    python main.py render --traj results/trajectory.csv --out fiber.svg --times 0,5e-4,1e-3

Exit codes: 0 on success, 1 on configuration or solver failure, 2 on I/O failure.
"""

import argparse
import os
import sys

from rich.console import Console
from rich.table import Table

from config import AppConfig
from debug_writer import DebugWriter
from render import default_times, parse_times, render_trajectory
from scenario_loader import ConfigError, load_scenario, load_study
from studies import run_bound_scenario, run_convergence_study, run_elongation_study
from time_stepper import LevelSolveError, check_elongation_bound, run
from trajectory_io import (
    elongation_frame,
    load_trajectory,
    save_trajectory,
    stats_frame,
    write_report,
)

console = Console()

STUDY_KINDS = ("convergence", "elongation", "bound")


def _fmt(x, digits=3):
    if x is None or x != x:
        return "-"
    return f"{x:.{digits}e}"


def simulate(args, writer):
    """Run one scenario and write trajectory, elongation and stats files."""
    scenario = load_scenario(args.config)
    console.print(
        f"Simulating {scenario.force.kind}: M = {scenario.num_nodes}, tau = {scenario.tau:g}, "
        f"T = {scenario.params.end_time:g}, density = {scenario.density.value}"
    )
    try:
        traj = run(scenario, writer=writer)
    except LevelSolveError as e:
        os.makedirs(args.out, exist_ok=True)
        save_trajectory(e.partial, os.path.join(args.out, "trajectory_partial.csv"))
        raise

    os.makedirs(args.out, exist_ok=True)
    save_trajectory(traj, os.path.join(args.out, "trajectory.csv"))
    write_report(elongation_frame(traj), os.path.join(args.out, "elongation.csv"))
    write_report(stats_frame(traj, timings=args.timings), os.path.join(args.out, "stats.csv"))

    series = check_elongation_bound(traj)
    monotone = all(r.passed for r in traj.reports if r is not None)
    console.print(f"✓ Solved {traj.solved_levels} levels in {traj.total_iterations} iterations")
    console.print(f"  Final elongation: {_fmt(traj.elongations[-1])}")
    mark = "✓" if series.satisfied else "✗"
    console.print(f"{mark} Elongation bound t*tau*l " + ("holds" if series.satisfied else f"violated at t = {series.first_violation:g}"))
    console.print(("✓" if monotone else "✗") + " Tangent norms monotone at the constraint points")
    console.print(f"✓ Wrote results to {args.out}")
    return 0


def _convergence(settings, args, writer):
    for density in settings.densities_for("convergence"):
        report = run_convergence_study(
            settings.case,
            density,
            settings.base.num_nodes,
            config=settings.base.config,
            params=settings.base.params,
            taus=settings.taus,
            t_star=settings.t_star,
            reference_index=settings.reference_index,
            writer=writer,
            literal_start=settings.base.literal_start,
        )
        write_report(
            report.to_frame(timings=args.timings),
            os.path.join(args.out, f"convergence_{density.value}.csv"),
        )

        table = Table(title=f"Convergence, {report.case}, {density.value}")
        for column in ("tau", "error L2", "error max", "dl", "iters"):
            table.add_column(column, justify="right")
        for row in report.rows:
            table.add_row(
                f"{row.tau:.4e}",
                _fmt(row.error_l2),
                _fmt(row.error_max),
                _fmt(row.dl),
                str(row.iters_total) if row.error is None else "[red]failed[/red]",
            )
        console.print(table)
        try:
            console.print(f"  Observed order: {report.order():.2f}")
        except ValueError:
            console.print("  Observed order: -")
        for row in report.rows:
            if row.error is not None:
                console.print(f"✗ tau = {row.tau:g}: {row.error}")


def _elongation(settings, args, writer):
    densities = settings.densities_for("elongation")
    report = run_elongation_study(
        settings.case,
        densities,
        settings.base.num_nodes,
        config=settings.base.config,
        params=settings.base.params,
        taus=settings.taus,
        t_star=settings.t_star,
        writer=writer,
        literal_start=settings.base.literal_start,
    )
    write_report(report.to_frame(), os.path.join(args.out, "elongation_study.csv"))

    table = Table(title=f"Elongation at t* = {settings.t_star:g}, {report.case}")
    table.add_column("tau", justify="right")
    for density in densities:
        table.add_column(f"dl {density.value}", justify="right")
    for i, tau in enumerate(report.taus):
        table.add_row(f"{tau:.4e}", *(_fmt(report.elongations[d][i]) for d in densities))
    console.print(table)
    for density, errors in report.errors.items():
        for tau, error in zip(report.taus, errors):
            if error is not None:
                console.print(f"✗ {density.value}, tau = {tau:g}: {error}")


def _bound(settings, args, writer):
    densities = settings.densities_for("bound")
    report = run_bound_scenario(
        settings.base.num_nodes,
        config=settings.base.config,
        params=settings.base.params,
        tau=settings.bound_tau,
        horizon=settings.horizon,
        densities=densities,
        writer=writer,
        literal_start=settings.base.literal_start,
    )
    write_report(report.to_frame(), os.path.join(args.out, "bound.csv"))
    for density in densities:
        if density in report.series:
            series = report.series[density]
            if series.satisfied:
                console.print(f"✓ {density.value}: elongation stays below t*tau*l")
            else:
                console.print(f"✗ {density.value}: bound violated from t = {series.first_violation:g}")
        else:
            console.print(f"✗ {density.value}: {report.errors[density]}")


def study(args, writer):
    """Run a study and write its report CSVs."""
    settings = load_study(args.config)
    os.makedirs(args.out, exist_ok=True)
    console.print(f"Running {args.kind} study (case {settings.case}, M = {settings.base.num_nodes})")
    {"convergence": _convergence, "elongation": _elongation, "bound": _bound}[args.kind](settings, args, writer)
    console.print(f"✓ Wrote {args.kind} report to {args.out}")
    return 0


def render(args, writer=None):
    """Draw trajectory snapshots into an SVG file."""
    try:
        traj = load_trajectory(args.traj)
    except ValueError as e:
        raise OSError(f"Unreadable trajectory file {args.traj}: {e}")
    times = parse_times(args.times) if args.times else default_times(traj)
    count = render_trajectory(traj, times, args.out)
    console.print(f"✓ Rendered {count} snapshot(s) to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        description="Fiber solver - inextensible elastic fiber dynamics by constrained minimization"
    )
    parser.add_argument("--debug", action="store_true", help="Write a JSONL solve log")
    parser.add_argument("--timings", action="store_true", help="Fill the wall_ms report columns")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("simulate", help="Run one scenario")
    p.add_argument("--config", required=True, help="Scenario JSON file")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=simulate)

    p = commands.add_parser("study", help="Run a time-step study")
    p.add_argument("--config", required=True, help="Study JSON file")
    p.add_argument("--kind", required=True, choices=STUDY_KINDS)
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=study)

    p = commands.add_parser("render", help="Draw trajectory snapshots as SVG")
    p.add_argument("--traj", required=True, help="Trajectory file")
    p.add_argument("--out", required=True, help="Output SVG file")
    p.add_argument("--times", help="Comma-separated snapshot times (default: 5 from 0 to T)")
    p.set_defaults(handler=render)
    return parser


def main(argv=None):
    """Parse arguments, run the command and map failures to exit codes."""
    args = build_parser().parse_args(argv)

    writer = None
    try:
        AppConfig.validate_config()
        if args.debug or AppConfig.DEBUG:
            writer = DebugWriter(enabled=True)
            console.print(f"Solve log: {writer.path}")
        return args.handler(args, writer)
    except ConfigError as e:
        console.print(f"✗ Configuration Error: {e}")
        return 1
    except OSError as e:
        console.print(f"✗ I/O Error: {e}")
        return 2
    except (ValueError, RuntimeError) as e:
        if writer:
            writer.log_error(e)
        console.print(f"✗ Solver Error: {e}")
        return 1
    finally:
        if writer:
            writer.close()


if __name__ == "__main__":
    sys.exit(main())
