"""
Time-step studies: convergence in tau, elongation against tau per constraint
density, and the elongation bound scenario under the combined force.

Independent runs are spread over a thread pool; results are always assembled in
input order so reports do not depend on scheduling.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from config import StudyConfig
from constraints import ConstraintDensity, build_constraints
from fiber_model import ForceField, ModelParams, assemble_cost, eval_cost, initial_state
from hermite_fem import assemble_forms, build_grid, l2_norm, split_coefficients
from optimizer import IterationLimitExceeded, OptimizerConfig, solve_level_exact, solve_time_level
from time_stepper import LevelSolveError, Scenario, check_elongation_bound, run

REPORT_COLUMNS = ["tau", "error_L2", "error_max", "dl", "iters_total", "iters_avg", "wall_ms"]
CASES = {"A": "caseA", "B": "caseB", "caseA": "caseA", "caseB": "caseB"}


def case_force(case, params):
    """Force of a study case ("A"/"caseA" or "B"/"caseB")."""
    if case not in CASES:
        raise ValueError(f"Unknown study case {case!r}, expected A or B")
    return ForceField.from_kind(CASES[case], params)


def _map_ordered(function, items, threads):
    threads = threads or StudyConfig.get_threads()
    if threads <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(function, items))


def _run_or_error(scenario, forms, writer):
    try:
        return run(scenario, writer=writer, forms=forms), None
    except (LevelSolveError, ValueError) as e:
        if writer is not None:
            writer.log_error(f"tau {scenario.tau}: {e}")
        return None, str(e)


def estimate_order(taus, values):
    """
    Least-squares slope of log(value) over log(tau).

    Entries that are zero, negative or not finite are ignored.

    Raises:
        ValueError: If fewer than two usable points remain.
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    usable = np.isfinite(values) & (values > 0) & np.isfinite(taus) & (taus > 0)
    if np.count_nonzero(usable) < 2:
        raise ValueError("Need at least two positive values to estimate an order")
    slope, _ = np.polyfit(np.log(taus[usable]), np.log(values[usable]), 1)
    return float(slope)


@dataclass
class ConvergenceRow:
    tau: float
    error_l2: float = float("nan")
    error_max: float = float("nan")
    dl: float = float("nan")
    iters_total: int = 0
    iters_avg: float = float("nan")
    wall_ms: float = float("nan")
    error: str = None


@dataclass
class ConvergenceReport:
    """Errors against the finest run and elongation at t* for each tau."""

    case: str
    density: ConstraintDensity
    t_star: float
    reference_index: int
    rows: list = field(default_factory=list)

    @property
    def taus(self):
        return [row.tau for row in self.rows]

    @property
    def errors(self):
        return [row.error_l2 for row in self.rows]

    def order(self, upto=None):
        """Observed order over rows 0..upto-1, excluding the reference row."""
        rows = [
            row for i, row in enumerate(self.rows[:upto])
            if i != self.reference_index
        ]
        return estimate_order([r.tau for r in rows], [r.error_l2 for r in rows])

    def to_frame(self, timings=False):
        """Report table with the fixed column order; wall_ms only with timings."""
        frame = pd.DataFrame(
            [
                {
                    "tau": row.tau,
                    "error_L2": row.error_l2,
                    "error_max": row.error_max,
                    "dl": row.dl,
                    "iters_total": row.iters_total,
                    "iters_avg": row.iters_avg,
                    "wall_ms": row.wall_ms if timings else None,
                }
                for row in self.rows
            ],
            columns=REPORT_COLUMNS,
        )
        return frame


def _node_max_error(diff, grid):
    values, _ = split_coefficients(diff, grid)
    return float(np.max(np.linalg.norm(values, axis=1)))


def run_convergence_study(
    case,
    density,
    num_nodes,
    config=None,
    params=None,
    taus=None,
    t_star=None,
    reference_index=None,
    threads=None,
    writer=None,
    literal_start=False,
):
    """
    Run one trajectory per tau up to t* and compare final states with the reference tau.

    Args:
        case (str): "A" or "B".
        density (ConstraintDensity): Constraint point density.
        num_nodes (int): Grid nodes M.
        config (OptimizerConfig, optional): Method settings.
        params (ModelParams, optional): Physical parameters; end time is replaced by t*.
        taus (list, optional): Time steps. Defaults to StudyConfig.taus().
        t_star (float, optional): Comparison time. Defaults to StudyConfig.T_STAR.
        reference_index (int, optional): Index of the reference tau.
        threads (int, optional): Worker threads. Defaults to FIBER_THREADS.
        writer (DebugWriter, optional): Solve log.
        literal_start (bool): Start convention passed to every run.

    Returns:
        ConvergenceReport: One row per tau; failed rows carry the error message.
    """
    config = config or OptimizerConfig()
    taus = list(taus) if taus is not None else StudyConfig.taus()
    t_star = StudyConfig.T_STAR if t_star is None else t_star
    reference_index = StudyConfig.REFERENCE_INDEX if reference_index is None else reference_index
    if not 0 <= reference_index < len(taus):
        raise ValueError(f"Reference index {reference_index} outside 0..{len(taus) - 1}")
    params = (params or ModelParams()).with_end_time(t_star)
    force = case_force(case, params)
    grid = build_grid(params.length, num_nodes)
    forms = assemble_forms(grid, params.dim)

    scenarios = [
        Scenario(
            force=force,
            params=params,
            tau=tau,
            num_nodes=num_nodes,
            density=density,
            config=config,
            literal_start=literal_start,
        )
        for tau in taus
    ]
    outcomes = _map_ordered(lambda sc: _run_or_error(sc, forms, writer), scenarios, threads)

    reference, _ = outcomes[reference_index]
    report = ConvergenceReport(CASES[case], density, t_star, reference_index)
    for tau, (traj, error) in zip(taus, outcomes):
        row = ConvergenceRow(tau=tau, error=error)
        if traj is not None:
            final = traj.states[-1]
            row.dl = traj.elongations[-1]
            row.iters_total = traj.total_iterations
            row.iters_avg = traj.total_iterations / max(traj.solved_levels, 1)
            row.wall_ms = float(sum(w for w in traj.wall_ms if w is not None))
            if reference is not None:
                diff = final - reference.states[-1]
                row.error_l2 = float(l2_norm(diff, forms))
                row.error_max = _node_max_error(diff, grid)
        report.rows.append(row)
        if writer is not None:
            writer.log_event(
                "study_row",
                {"study": "convergence", "case": report.case, "tau": tau,
                 "error_L2": row.error_l2, "dl": row.dl, "error": error},
            )
    return report


@dataclass
class ElongationReport:
    """Delta l(t*) against tau for several constraint densities."""

    case: str
    t_star: float
    taus: list
    elongations: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def order(self, density, upto=None):
        return estimate_order(self.taus[:upto], self.elongations[density][:upto])

    def to_frame(self):
        frame = pd.DataFrame({"tau": self.taus})
        for density, values in self.elongations.items():
            frame[f"dl_{density.value}"] = values
        return frame


def run_elongation_study(
    case,
    densities,
    num_nodes,
    config=None,
    params=None,
    taus=None,
    t_star=None,
    threads=None,
    writer=None,
    literal_start=False,
):
    """
    Elongation at t* for every (density, tau) pair.

    Returns:
        ElongationReport: Failed runs are recorded as NaN with their error message.
    """
    config = config or OptimizerConfig()
    taus = list(taus) if taus is not None else StudyConfig.taus()
    t_star = StudyConfig.T_STAR if t_star is None else t_star
    params = (params or ModelParams()).with_end_time(t_star)
    force = case_force(case, params)
    grid = build_grid(params.length, num_nodes)
    forms = assemble_forms(grid, params.dim)
    densities = list(densities)

    scenarios = [
        Scenario(
            force=force,
            params=params,
            tau=tau,
            num_nodes=num_nodes,
            density=density,
            config=config,
            literal_start=literal_start,
        )
        for density in densities
        for tau in taus
    ]
    outcomes = _map_ordered(lambda sc: _run_or_error(sc, forms, writer), scenarios, threads)

    report = ElongationReport(CASES[case], t_star, taus)
    for i, density in enumerate(densities):
        chunk = outcomes[i * len(taus):(i + 1) * len(taus)]
        report.elongations[density] = [
            traj.elongations[-1] if traj is not None else float("nan") for traj, _ in chunk
        ]
        report.errors[density] = [error for _, error in chunk]
        if writer is not None:
            writer.log_event(
                "study_row",
                {"study": "elongation", "case": report.case, "density": density.value,
                 "dl": report.elongations[density]},
            )
    return report


@dataclass
class BoundReport:
    """Trajectories of the combined-force scenario and their bound series."""

    tau: float
    horizon: float
    trajectories: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def to_frame(self):
        """Columns t and bound, then dl_<density> and satisfied_<density> per density."""
        frame = None
        for density, series in self.series.items():
            if frame is None:
                frame = pd.DataFrame(
                    {"t": [row.t for row in series.rows], "bound": [row.bound for row in series.rows]}
                )
            frame[f"dl_{density.value}"] = [row.dl for row in series.rows]
            frame[f"satisfied_{density.value}"] = [row.satisfied for row in series.rows]
        return frame if frame is not None else pd.DataFrame(columns=["t", "bound"])


def run_bound_scenario(
    num_nodes,
    config=None,
    params=None,
    tau=None,
    horizon=None,
    densities=None,
    threads=None,
    writer=None,
    literal_start=False,
):
    """
    Combined-force runs for each density with the elongation bound check.

    Args:
        num_nodes (int): Grid nodes M.
        config (OptimizerConfig, optional): Method settings.
        params (ModelParams, optional): Physical parameters; end time is the horizon.
        tau (float, optional): Time step. Defaults to StudyConfig.BOUND_TAU.
        horizon (float, optional): End time. Defaults to StudyConfig.BOUND_HORIZON.
        densities (list, optional): Defaults to nodal, half and third.

    Returns:
        BoundReport: Trajectories and bound series per density.
    """
    config = config or OptimizerConfig()
    tau = StudyConfig.BOUND_TAU if tau is None else tau
    horizon = StudyConfig.BOUND_HORIZON if horizon is None else horizon
    densities = list(densities) if densities is not None else list(ConstraintDensity)
    params = (params or ModelParams()).with_end_time(horizon)
    force = ForceField.combined(params.omega, params.dim)
    grid = build_grid(params.length, num_nodes)
    forms = assemble_forms(grid, params.dim)

    scenarios = [
        Scenario(
            force=force,
            params=params,
            tau=tau,
            num_nodes=num_nodes,
            density=density,
            config=config,
            literal_start=literal_start,
        )
        for density in densities
    ]
    outcomes = _map_ordered(lambda sc: _run_or_error(sc, forms, writer), scenarios, threads)

    report = BoundReport(tau, horizon)
    for density, (traj, error) in zip(densities, outcomes):
        report.errors[density] = error
        if traj is None:
            continue
        report.trajectories[density] = traj
        report.series[density] = check_elongation_bound(traj)
        if writer is not None:
            writer.log_event(
                "study_row",
                {"study": "bound", "density": density.value,
                 "satisfied": report.series[density].satisfied,
                 "final_dl": traj.elongations[-1]},
            )
    return report


@dataclass(frozen=True)
class ProjectionComparison:
    """First-level minima per projection next to the exact constrained minimum."""

    projections: tuple
    costs: dict
    iterations: dict
    converged: dict
    cost_exact: float

    def gap(self, projection):
        """Relative distance of one projection's minimum to the exact one."""
        scale = max(abs(self.cost_exact), np.finfo(float).tiny)
        return abs(self.costs[projection] - self.cost_exact) / scale

    @property
    def relative_deviation(self):
        first, second = (self.costs[name] for name in self.projections[:2])
        scale = max(abs(first), abs(second), np.finfo(float).tiny)
        return abs(first - second) / scale


def compare_projections(
    case,
    num_nodes,
    tau,
    density=ConstraintDensity.NODAL,
    config=None,
    params=None,
    projections=("diagonal", "seminorm"),
):
    """
    Solve the first level from the straight state with each projection.

    Each projection is paired with the Riesz gradient of its own metric. A run that
    hits max_iter keeps its best iterate and is flagged as not converged.

    Returns:
        ProjectionComparison: Minimized costs, iteration counts and the exact minimum.
    """
    if len(projections) < 2:
        raise ValueError(f"Need two projections to compare, got {projections}")
    config = config or OptimizerConfig()
    params = params or ModelParams()
    force = case_force(case, params)
    grid = build_grid(params.length, num_nodes)
    forms = assemble_forms(grid, params.dim)
    r0 = initial_state(grid, params)
    cost = assemble_cost(r0, r0, force, params, tau, forms, grid)
    cs = build_constraints(r0, grid, density)

    costs, iterations, converged = {}, {}, {}
    for projection in projections:
        variant = replace(config, projection=projection, gradient_metric="riesz")
        try:
            r_next, stats = solve_time_level(
                r0, r0, force, params, tau, density, forms, grid, variant, constraint_set=cs
            )
            converged[projection] = True
        except IterationLimitExceeded as e:
            r_next, stats = e.best_iterate, e.stats
            converged[projection] = False
        costs[projection] = eval_cost(cost, r_next)
        iterations[projection] = stats.iterations

    return ProjectionComparison(
        projections=tuple(projections),
        costs=costs,
        iterations=iterations,
        converged=converged,
        cost_exact=eval_cost(cost, solve_level_exact(cost, cs)),
    )
