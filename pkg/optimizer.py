"""
Projected gradient method with a projected Armijo step for one time level.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from config import OptimizerDefaults
from constraints import ConstraintDensity, build_constraints
from fiber_model import assemble_cost, cost_change, eval_cost, grad_cost
from hermite_fem import h2_norm, h2_seminorm
from projections import (
    gram_solve,
    metric_block,
    project_diagonal,
    project_euclidean,
    project_h2,
    project_nodal_closed_form,
    project_seminorm,
    solve_constrained,
    stiffness_solve,
)

PROJECTIONS = ("euclidean", "diagonal", "seminorm", "h2")
GRADIENT_METRICS = ("euclidean", "riesz", "h2")
STATIONARITY_NORMS = ("full", "seminorm")
SPARSE_METRICS = ("seminorm", "h2")


class ArmijoFailure(RuntimeError):
    """Raised when backtracking drops below the smallest admissible step."""

    def __init__(self, sigma, iterate):
        self.sigma = sigma
        self.iterate = iterate
        super().__init__(
            f"Armijo backtracking failed: step {sigma:.3e} below the admissible minimum"
        )


class IterationLimitExceeded(RuntimeError):
    """Raised when a level does not reach the stationarity tolerance within max_iter."""

    def __init__(self, best_iterate, stats):
        self.best_iterate = best_iterate
        self.stats = stats
        super().__init__(
            f"Iteration limit of {stats.iterations} reached with stationarity "
            f"{stats.final_stationarity:.3e}"
        )


@dataclass(frozen=True)
class OptimizerConfig:
    """Tolerances, Armijo parameters and metric choices of the projected gradient method."""

    tol_a: float = OptimizerDefaults.TOL_A
    tol_r: float = OptimizerDefaults.TOL_R
    max_iter: int = OptimizerDefaults.MAX_ITER
    sigma0: float = OptimizerDefaults.SIGMA0
    beta: float = OptimizerDefaults.BETA
    armijo_c: float = OptimizerDefaults.ARMIJO_C
    sigma_min: float = OptimizerDefaults.SIGMA_MIN
    projection: str = OptimizerDefaults.PROJECTION
    gradient_metric: str = OptimizerDefaults.GRADIENT_METRIC
    stationarity_norm: str = OptimizerDefaults.STATIONARITY_NORM

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"Armijo beta must lie in (0, 1), got {self.beta}")
        if self.tol_a <= 0 or self.tol_r <= 0:
            raise ValueError(
                f"Tolerances must be positive, got tol_a={self.tol_a}, tol_r={self.tol_r}"
            )
        if self.armijo_c <= 0:
            raise ValueError(f"Armijo c must be positive, got {self.armijo_c}")
        if not 0.0 < self.sigma_min < self.sigma0:
            raise ValueError(
                f"Need 0 < sigma_min < sigma0, got sigma_min={self.sigma_min}, sigma0={self.sigma0}"
            )
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"Unknown projection {self.projection!r}, expected one of {PROJECTIONS}")
        if self.gradient_metric not in GRADIENT_METRICS:
            raise ValueError(
                f"Unknown gradient metric {self.gradient_metric!r}, expected one of {GRADIENT_METRICS}"
            )
        if self.stationarity_norm not in STATIONARITY_NORMS:
            raise ValueError(
                f"Unknown stationarity norm {self.stationarity_norm!r}, "
                f"expected one of {STATIONARITY_NORMS}"
            )

    def to_dict(self):
        return {
            "tolA": self.tol_a,
            "tolR": self.tol_r,
            "maxIter": self.max_iter,
            "sigma0": self.sigma0,
            "beta": self.beta,
            "c": self.armijo_c,
            "sigmaMin": self.sigma_min,
            "projection": self.projection,
            "gradientMetric": self.gradient_metric,
            "stationarityNorm": self.stationarity_norm,
        }


@dataclass
class SolveStats:
    """Per-level record of the projected gradient run."""

    iterations: int = 0
    initial_stationarity: float = 0.0
    final_stationarity: float = 0.0
    cost_history: list = field(default_factory=list)
    cost_decreases: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    wall_ms: float = 0.0

    @property
    def final_cost(self):
        return self.cost_history[-1] if self.cost_history else float("nan")


def _needs_forms(config, forms):
    if forms is None and (
        config.projection in SPARSE_METRICS
        or config.gradient_metric == "h2"
        or (config.gradient_metric == "riesz" and config.projection in SPARSE_METRICS)
    ):
        raise ValueError(
            f"Projection {config.projection!r} with gradient metric "
            f"{config.gradient_metric!r} needs the assembled forms"
        )


def level_weights(cost, cs):
    """
    Diagonal of the level Hessian 2A on the free coefficients.

    The "diagonal" projection and its Riesz gradient use this Jacobi metric; it
    changes with tau and the grid through A.
    """
    return cs.cached(("level_weights", cost), lambda: 2.0 * cost.matrix.diagonal()[cs.free])


def project(y, cs, config, forms=None, cost=None):
    """Apply the projection selected in config; "diagonal" needs the level cost."""
    if config.projection == "seminorm":
        _needs_forms(config, forms)
        return project_seminorm(y, cs, forms)
    if config.projection == "h2":
        _needs_forms(config, forms)
        return project_h2(y, cs, forms)
    if config.projection == "diagonal":
        if cost is None:
            raise ValueError("The diagonal projection needs the level cost")
        return project_diagonal(y, cs, level_weights(cost, cs), key=("diagonal", cost))
    if cs.density is ConstraintDensity.NODAL:
        return project_nodal_closed_form(y, cs)
    return project_euclidean(y, cs)


def _metric_representative(grad, cost, cs, metric, forms):
    if metric == "euclidean":
        return grad
    direction = np.zeros_like(grad)
    if metric == "diagonal":
        direction[cs.free] = grad[cs.free] / level_weights(cost, cs)
    elif metric == "seminorm":
        direction[cs.free] = stiffness_solve(grad[cs.free], cs, forms)
    else:
        direction[cs.free] = gram_solve(grad[cs.free], cs, forms)
    return direction


def descent_direction(v, cost, cs, config, forms=None):
    """
    Gradient of J in the configured metric, zero on the fixed coefficients.

    "euclidean" returns the coefficient gradient g = 2Av + b. "riesz" represents g in
    the metric of the projection: D_f z = g_f for the diagonal projection, S_ff z = g_f
    for the seminorm projection, G_ff z = g_f for the H^2 projection and z = g for the
    Euclidean one. "h2" always solves G_ff z = g_f with G = Upsilon + Upsilon' + Upsilon''.
    """
    _needs_forms(config, forms)
    grad = grad_cost(cost, v)
    if config.gradient_metric == "euclidean":
        return grad
    metric = "h2" if config.gradient_metric == "h2" else config.projection
    return _metric_representative(grad, cost, cs, metric, forms)


def _measure(p, forms, config):
    if config.stationarity_norm == "seminorm":
        return float(h2_seminorm(p, forms))
    return float(h2_norm(p, forms))


def stationarity(v, cost, cs, forms, config, direction=None):
    """
    Stationarity measure ||v - P(v - grad J(v))||.

    Args:
        v (np.ndarray): Feasible iterate.
        cost (QuadraticCost): Cost of the level.
        cs (ConstraintSet): Constraints of the level.
        forms (AssembledForms): FE matrices (for the norm).
        config (OptimizerConfig): Projection, gradient metric and norm choice.
        direction (np.ndarray, optional): Precomputed descent_direction at v.

    Returns:
        float: The H^2 norm (or seminorm) of the projected gradient step.
    """
    if direction is None:
        direction = descent_direction(v, cost, cs, config, forms)
    p = np.asarray(v, dtype=float) - project(v - direction, cs, config, forms, cost)
    return _measure(p, forms, config)


def _projection_norm_squared(step, cost, cs, config, forms):
    """Squared length of a step in the metric the projection minimizes."""
    if config.projection == "euclidean":
        return float(step @ step)
    free = step[cs.free]
    if config.projection == "diagonal":
        return float(free @ (level_weights(cost, cs) * free))
    return float(free @ (metric_block(cs, forms, config.projection) @ free))


def armijo_step(v, cost, cs, config, forms=None, direction=None):
    """
    One projected Armijo step.

    Tries sigma = sigma0 * beta^m for m = 0, 1, ... and accepts the first candidate
    w = P(v - sigma d) with
        J(w) <= J(v) - c ||v - w||^2 / sigma   and   J(w) < J(v),
    where ||.|| is the metric of the projection.

    Returns:
        tuple: (sigma, w, decrease) with decrease = J(w) - J(v) < 0.

    Raises:
        ArmijoFailure: If sigma falls below sigma_min before acceptance.
    """
    if direction is None:
        direction = descent_direction(v, cost, cs, config, forms)
    v = np.asarray(v, dtype=float)
    sigma = config.sigma0
    while sigma >= config.sigma_min:
        candidate = project(v - sigma * direction, cs, config, forms, cost)
        change = cost_change(cost, v, candidate)
        moved = _projection_norm_squared(v - candidate, cost, cs, config, forms)
        if change <= -config.armijo_c * moved / sigma and change < 0.0:
            return sigma, candidate, change
        sigma *= config.beta
    raise ArmijoFailure(sigma, v)


def solve_level_exact(cost, cs, start=None):
    """
    Exact minimizer of a level cost over the linearized constraint set.

    Solves the KKT system of J on the free coefficients,
        [2 A_ff  C_f^T] [v_f]   [-(b_f + 2 A_fx v_x)]
        [C_f     0    ] [mu ] = [g - C_x v_x        ],
    with the fixed coefficients v_x taken from start (the reference state of cs by
    default). Used as an oracle for the iterative solver.

    Returns:
        np.ndarray: The minimizing coefficient tuple.

    Raises:
        ProjectionError: If the KKT system is singular.
    """
    start = np.array(cs.reference if start is None else start, dtype=float)
    free, fixed = cs.free, cs.fixed
    matrix = cost.matrix.tocsr()
    block = (2.0 * matrix[free][:, free]).tocsc()
    rhs = -(cost.linear[free] + 2.0 * (matrix[free][:, fixed] @ start[fixed]))
    return solve_constrained(block, rhs, start, cs)


def solve_time_level(
    r_k,
    r_km1,
    force,
    params,
    tau,
    density,
    forms,
    grid,
    config,
    constraint_set=None,
):
    """
    Minimize the level cost over the linearized constraint set, starting from r_k.

    Iterates armijo_step until the stationarity measure drops to
    tol_a + tol_r * (initial measure).

    Args:
        r_k, r_km1 (np.ndarray): Current and previous states.
        force (ForceField): Line force.
        params (ModelParams): Physical parameters.
        tau (float): Time step.
        density (ConstraintDensity): Constraint point density.
        forms (AssembledForms): FE matrices.
        grid (Grid): The grid.
        config (OptimizerConfig): Method settings.
        constraint_set (ConstraintSet, optional): Prebuilt constraints for r_k.

    Returns:
        tuple: (r_next, stats)

    Raises:
        IterationLimitExceeded: If max_iter steps do not reach the tolerance.
        ArmijoFailure: If a step cannot be accepted.
    """
    start = time.perf_counter()
    cs = constraint_set if constraint_set is not None else build_constraints(r_k, grid, density)
    cost = assemble_cost(r_k, r_km1, force, params, tau, forms, grid)

    v = np.array(r_k, dtype=float)
    stats = SolveStats(cost_history=[eval_cost(cost, v)])
    direction = descent_direction(v, cost, cs, config, forms)
    measure = stationarity(v, cost, cs, forms, config, direction=direction)
    stats.initial_stationarity = measure
    threshold = config.tol_a + config.tol_r * measure

    while measure > threshold:
        if stats.iterations >= config.max_iter:
            stats.final_stationarity = measure
            stats.wall_ms = 1e3 * (time.perf_counter() - start)
            raise IterationLimitExceeded(v, stats)
        sigma, v, change = armijo_step(v, cost, cs, config, forms, direction=direction)
        stats.iterations += 1
        stats.step_sizes.append(sigma)
        stats.cost_decreases.append(change)
        stats.cost_history.append(eval_cost(cost, v))
        direction = descent_direction(v, cost, cs, config, forms)
        measure = stationarity(v, cost, cs, forms, config, direction=direction)

    stats.final_stationarity = measure
    stats.wall_ms = 1e3 * (time.perf_counter() - start)
    return v, stats
