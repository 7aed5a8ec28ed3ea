"""
Rothe time stepping: one constrained minimization per time level.

Trajectories hold the states r_0..r_N at t_k = k tau together with per-level solver
statistics, elongations and the structural checks of each step.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from config import GridDefaults
from constraints import ConstraintDensity, build_constraints, residual
from debug_writer import create_level_snapshot
from fiber_model import ForceField, ModelParams, initial_state
from hermite_fem import assemble_forms, basis_matrix, build_grid, composite_gauss, infer_dim
from multiplier import lambda_action
from optimizer import ArmijoFailure, IterationLimitExceeded, OptimizerConfig, solve_time_level

MONOTONICITY_TOLERANCE = 1e-9
BOUND_SLACK = 1e-12


class LevelSolveError(RuntimeError):
    """A level solve failed; carries the level index and the trajectory so far."""

    def __init__(self, level, partial, cause):
        self.level = level
        self.partial = partial
        self.cause = cause
        super().__init__(f"Time level {level} failed: {cause}")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run one trajectory."""

    force: ForceField
    params: ModelParams = field(default_factory=ModelParams)
    tau: float = 1e-4
    num_nodes: int = GridDefaults.NODES
    density: ConstraintDensity = ConstraintDensity.NODAL
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    literal_start: bool = False
    multiplier_tests: tuple = ()

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"Time step must be positive, got {self.tau}")
        if self.force.dim != self.params.dim:
            raise ValueError(
                f"Force has dimension {self.force.dim}, model has {self.params.dim}"
            )


@dataclass(frozen=True)
class MonotonicityReport:
    """Tangent checks of one step at the constraint points of its level."""

    orthogonality_defect: float
    min_norm_gain: float
    max_tangent_norm: float
    upper_bound: float = None

    @property
    def passed(self):
        return (
            self.orthogonality_defect <= MONOTONICITY_TOLERANCE
            and self.min_norm_gain >= -MONOTONICITY_TOLERANCE
        )

    @property
    def within_upper_bound(self):
        if self.upper_bound is None:
            return None
        return self.max_tangent_norm <= self.upper_bound + MONOTONICITY_TOLERANCE


@dataclass
class Trajectory:
    """
    States r_0..r_N with per-level records.

    stats, reports and wall_ms are indexed by the solved level that produced
    states[k + 1]; levels fixed by the start convention have None entries.
    """

    params: ModelParams
    grid: object
    tau: float
    density: ConstraintDensity
    times: np.ndarray
    states: list = field(repr=False)
    elongations: list = field(default_factory=list)
    stats: list = field(default_factory=list, repr=False)
    wall_ms: list = field(default_factory=list, repr=False)
    reports: list = field(default_factory=list, repr=False)
    multipliers: list = field(default_factory=list, repr=False)
    metadata: dict = field(default_factory=dict, repr=False)

    @property
    def num_steps(self):
        return len(self.times) - 1

    @property
    def end_time(self):
        return float(self.times[-1])

    @property
    def total_iterations(self):
        return sum(s.iterations for s in self.stats if s is not None)

    @property
    def solved_levels(self):
        return sum(1 for s in self.stats if s is not None)


def num_steps(end_time, tau):
    """
    N = T / tau, which must be an integer up to rounding.

    Raises:
        ValueError: If tau does not divide T.
    """
    steps = int(round(end_time / tau))
    if steps < 1 or abs(steps * tau - end_time) > 1e-9 * end_time:
        raise ValueError(f"Time step {tau} does not divide the end time {end_time}")
    return steps


def elongation(v, grid, num_points=5):
    """
    Length change int_0^l |d_s v| ds - l by composite Gauss quadrature.

    Args:
        v (np.ndarray): Coefficient tuple.
        grid (Grid): The grid.
        num_points (int): Gauss points per cell.

    Returns:
        float: Delta l.
    """
    cells, xi, weights, _ = composite_gauss(grid, num_points)
    dim = infer_dim(v, grid)
    tangents = basis_matrix(grid, cells, xi, order=1) @ np.asarray(v, dtype=float).reshape(-1, dim)
    return float(weights @ np.linalg.norm(tangents, axis=1) - grid.length)


def monotonicity_check(r_k, r_next, cs, upper_bound=None):
    """
    Check the tangent conditions a feasible step must satisfy at the constraint points.

    (d_s r_next - d_s r_k) . d_s r_k = 0 and |d_s r_next| >= |d_s r_k|.

    Args:
        r_k (np.ndarray): Reference state of the level.
        r_next (np.ndarray): Solved state.
        cs (ConstraintSet): Constraints built from r_k.
        upper_bound (float, optional): Bound on |d_s r_next|, e.g. 1 + t tau.

    Returns:
        MonotonicityReport: The report.
    """
    rows = basis_matrix(cs.grid, cs.cells, cs.xi, order=1)
    before = rows @ np.asarray(r_k, dtype=float).reshape(-1, cs.dim)
    after = rows @ np.asarray(r_next, dtype=float).reshape(-1, cs.dim)
    defect = np.einsum("ij,ij->i", after - before, before)
    after_norm = np.linalg.norm(after, axis=1)
    gain = after_norm - np.linalg.norm(before, axis=1)
    return MonotonicityReport(
        orthogonality_defect=float(np.max(np.abs(defect), initial=0.0)),
        min_norm_gain=float(np.min(gain, initial=0.0)),
        max_tangent_norm=float(np.max(after_norm, initial=0.0)),
        upper_bound=upper_bound,
    )


def interpolant_at(traj, t):
    """
    Piecewise-linear-in-time interpolant of the trajectory.

    Returns:
        np.ndarray: r_{k-1} + ((t - t_{k-1}) / tau) (r_k - r_{k-1}) for t in (t_{k-1}, t_k].

    Raises:
        ValueError: If t lies outside [0, T].
    """
    end = traj.end_time
    slack = 1e-12 * max(end, 1.0)
    if not (-slack <= t <= end + slack):
        raise ValueError(f"Time {t} outside [0, {end}]")
    t = min(max(t, 0.0), end)
    k = int(np.searchsorted(traj.times, t, side="left"))
    if k == 0 or traj.times[k] == t:
        return np.array(traj.states[k], dtype=float)
    weight = (t - traj.times[k - 1]) / traj.tau
    return traj.states[k - 1] + weight * (traj.states[k] - traj.states[k - 1])


@dataclass(frozen=True)
class BoundRow:
    t: float
    dl: float
    bound: float
    satisfied: bool


@dataclass(frozen=True)
class BoundSeries:
    """Elongation against the bound t tau l at every time level."""

    density: ConstraintDensity
    rows: tuple

    @property
    def satisfied(self):
        return all(row.satisfied for row in self.rows)

    @property
    def first_violation(self):
        for row in self.rows:
            if not row.satisfied:
                return row.t
        return None


def check_elongation_bound(traj):
    """
    Compare Delta l(t_k) with t_k tau l for every level.

    Returns:
        BoundSeries: One row per time level.
    """
    length = traj.params.length
    rows = []
    for t, dl in zip(traj.times, traj.elongations):
        bound = float(t) * traj.tau * length
        rows.append(BoundRow(float(t), float(dl), bound, bool(dl <= bound + BOUND_SLACK)))
    return BoundSeries(traj.density, tuple(rows))


def _log_failure(writer, level, error):
    if writer is None:
        return
    if isinstance(error, ArmijoFailure):
        writer.log_event("armijo_failure", {"level": level, "sigma": error.sigma})
    elif isinstance(error, IterationLimitExceeded):
        writer.log_event(
            "iteration_limit",
            {"level": level, "stationarity": error.stats.final_stationarity},
        )
    writer.log_error(f"level {level}: {error}")


def run(scenario, writer=None, forms=None):
    """
    Integrate a scenario from the straight state to its end time.

    By default the zero initial velocity is a ghost level r_{-1} = r_0 and levels
    0..N-1 are solved. With literal_start, r_1 = r_0 is prescribed and levels
    1..N-1 are solved.

    Args:
        scenario (Scenario): What to run.
        writer (DebugWriter, optional): Receives level snapshots and events.
        forms (AssembledForms, optional): Prebuilt matrices for the grid.

    Returns:
        Trajectory: The full trajectory.

    Raises:
        ValueError: If tau does not divide T.
        LevelSolveError: If a level solve fails.
    """
    params = scenario.params
    steps = num_steps(params.end_time, scenario.tau)
    grid = build_grid(params.length, scenario.num_nodes)
    if forms is None:
        forms = assemble_forms(grid, params.dim)
    r0 = initial_state(grid, params)

    traj = Trajectory(
        params=params,
        grid=grid,
        tau=scenario.tau,
        density=scenario.density,
        times=scenario.tau * np.arange(steps + 1),
        states=[r0],
        elongations=[elongation(r0, grid)],
        metadata={
            "force": scenario.force.to_dict(),
            "optimizer": scenario.config.to_dict(),
            "literalStart": scenario.literal_start,
        },
    )
    traj.times[-1] = params.end_time

    if scenario.literal_start:
        traj.states.append(r0.copy())
        traj.elongations.append(traj.elongations[0])
        traj.stats.append(None)
        traj.wall_ms.append(None)
        traj.reports.append(None)
        first_level, previous = 1, r0
    else:
        first_level, previous = 0, r0

    # Multipliers start at zero for the levels that are not solved.
    zero_actions = [0.0] * len(scenario.multiplier_tests)
    traj.multipliers = [zero_actions] * len(traj.states)

    if writer is not None:
        writer.log_event(
            "run_start",
            {
                "force": scenario.force.kind,
                "tau": scenario.tau,
                "nodes": scenario.num_nodes,
                "density": scenario.density.value,
                "steps": steps,
            },
        )

    for level in range(first_level, steps):
        r_k = traj.states[level]
        start = time.perf_counter()
        try:
            cs = build_constraints(r_k, grid, scenario.density)
            r_next, stats = solve_time_level(
                r_k,
                previous,
                scenario.force,
                params,
                scenario.tau,
                scenario.density,
                forms,
                grid,
                scenario.config,
                constraint_set=cs,
            )
        except (ArmijoFailure, IterationLimitExceeded, ValueError) as e:
            _log_failure(writer, level, e)
            raise LevelSolveError(level, traj, e) from e
        wall_ms = 1e3 * (time.perf_counter() - start)

        t_next = float(traj.times[level + 1])
        report = monotonicity_check(r_k, r_next, cs, upper_bound=1.0 + t_next * scenario.tau)
        dl = elongation(r_next, grid)
        traj.states.append(r_next)
        traj.elongations.append(dl)
        traj.stats.append(stats)
        traj.wall_ms.append(wall_ms)
        traj.reports.append(report)
        traj.multipliers.append([
            lambda_action(r_next, r_k, previous, scenario.force, params, scenario.tau, g, grid, forms)
            for g in scenario.multiplier_tests
        ])

        if writer is not None:
            writer.log_cycle(
                create_level_snapshot(
                    level=level,
                    t=t_next,
                    iterations=stats.iterations,
                    initial_stationarity=stats.initial_stationarity,
                    final_stationarity=stats.final_stationarity,
                    final_cost=stats.final_cost,
                    elongation=dl,
                    feasibility=float(np.max(np.abs(residual(r_next, cs)), initial=0.0)),
                    wall_ms=wall_ms,
                )
            )
        previous = r_k

    if writer is not None:
        writer.log_event(
            "run_end",
            {
                "levels": traj.solved_levels,
                "iterations": traj.total_iterations,
                "final_elongation": traj.elongations[-1],
            },
        )
    return traj

