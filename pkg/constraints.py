"""
Linearized inextensibility constraints for one time level.

At each constraint point sigma the next state v must satisfy
    d_s v(sigma) . t = |t|^2,   t = d_s r_k(sigma),
which is one row of the affine system C v = g.
"""
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from hermite_fem import basis_matrix, eval_fe, infer_dim, split_coefficients

DEGENERATE_TANGENT = 1e-9


class DegenerateStateError(ValueError):
    """Raised when a reference tangent vanishes at a point where it is needed."""

    def __init__(self, position, norm):
        self.position = position
        self.norm = norm
        super().__init__(
            f"Degenerate reference state: tangent norm {norm:.3e} at s = {position:.6g}"
        )


class ConstraintDensity(Enum):
    """Where the linearized constraint is imposed."""

    NODAL = "nodal"
    HALF = "half"
    THIRD = "third"

    @property
    def divisions(self):
        """Constraint points per cell."""
        return {"nodal": 1, "half": 2, "third": 3}[self.value]

    @classmethod
    def from_name(cls, name):
        try:
            return cls(str(name).lower())
        except ValueError:
            names = [d.value for d in cls]
            raise ValueError(f"Unknown constraint density {name!r}, expected one of {names}")


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """
    Affine system C v = g referenced to a previous state.

    Rows are ordered cell by cell; within cell i the points are s_i + k h / den.
    Factorizations used by the projections are cached on the instance.
    """

    reference: np.ndarray = field(repr=False)
    grid: object
    density: ConstraintDensity
    dim: int
    points: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    xi: np.ndarray = field(repr=False)
    tangents: np.ndarray = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    free: np.ndarray = field(repr=False)
    fixed: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: object = field(default_factory=threading.RLock, init=False, repr=False)

    @property
    def size(self):
        """Number of constraint rows d."""
        return self.points.size

    def cached(self, key, factory):
        """Return the cached value for key, building it with factory() once."""
        with self._lock:
            if key not in self._cache:
                self._cache[key] = factory()
            return self._cache[key]


def constraint_points(grid, density):
    """
    Constraint points of a density.

    Returns:
        tuple: (cells, xi, points) in cell-major order, d = divisions * (M-1).
    """
    den = density.divisions
    cells = np.repeat(np.arange(grid.num_cells), den)
    offsets = np.tile(np.arange(den), grid.num_cells)
    xi = 2.0 * offsets / den - 1.0
    points = grid.nodes[cells] + offsets * grid.h / den
    return cells, xi, points


def build_constraints(r_k, grid, density):
    """
    Build the constraint system referenced to r_k.

    Args:
        r_k (np.ndarray): Reference state.
        grid (Grid): The grid.
        density (ConstraintDensity): Point density.

    Returns:
        ConstraintSet: System with C r_k = g.

    Raises:
        DegenerateStateError: If |d_s r_k| < 1e-9 at a constraint point.
    """
    density = density if isinstance(density, ConstraintDensity) else ConstraintDensity.from_name(density)
    dim = infer_dim(r_k, grid)
    reference = np.array(r_k, dtype=float)
    reference.setflags(write=False)

    cells, xi, points = constraint_points(grid, density)
    slope_rows = basis_matrix(grid, cells, xi, order=1).tocoo()
    tangents = slope_rows @ reference.reshape(2 * grid.num_nodes, dim)

    norms = np.linalg.norm(tangents, axis=1)
    bad = np.flatnonzero(norms < DEGENERATE_TANGENT)
    if bad.size:
        raise DegenerateStateError(points[bad[0]], norms[bad[0]])

    # Tangent components are stored even when zero, so every row keeps one entry
    # per component of each basis function it touches.
    rows = np.repeat(slope_rows.row, dim)
    cols = (slope_rows.col[:, None] * dim + np.arange(dim)).reshape(-1)
    data = (slope_rows.data[:, None] * tangents[slope_rows.row]).reshape(-1)
    matrix = sp.csr_matrix(
        (data, (rows, cols)), shape=(points.size, grid.coefficient_size(dim))
    )

    return ConstraintSet(
        reference=reference,
        grid=grid,
        density=density,
        dim=dim,
        points=points,
        cells=cells,
        xi=xi,
        tangents=tangents,
        matrix=matrix,
        rhs=norms**2,
        free=grid.free_indices(dim),
        fixed=grid.fixed_indices(dim),
    )


def residual(v, cs):
    """C v - g, i.e. (d_s v - d_s r_k) . d_s r_k at each constraint point."""
    v = np.asarray(v, dtype=float)
    if v.size != cs.matrix.shape[1]:
        raise ValueError(
            f"Coefficient tuple of length {v.size} does not match constraints on "
            f"{cs.matrix.shape[1]} coefficients"
        )
    return cs.matrix @ v - cs.rhs


def check_tau_inequality(v, cs, tau, samples):
    """
    A posteriori check of |d_s v - d_s r_k| <= tau^2 on equispaced samples.

    Args:
        v (np.ndarray): Candidate state.
        cs (ConstraintSet): Constraints of the level (supplies r_k).
        tau (float): Time step.
        samples (int): Number of sample points, at least M.

    Returns:
        tuple: (max_deviation, satisfied)
    """
    if int(samples) != samples or samples < cs.grid.num_nodes:
        raise ValueError(
            f"Need at least {cs.grid.num_nodes} samples, got {samples}"
        )
    s = np.linspace(0.0, cs.grid.length, int(samples))
    deviation = eval_fe(v, cs.grid, s, order=1) - eval_fe(cs.reference, cs.grid, s, order=1)
    max_deviation = float(np.max(np.linalg.norm(deviation, axis=1)))
    return max_deviation, max_deviation <= tau**2


def midpoint_derivatives(coeffs, grid):
    """
    First derivatives at the cell midpoints from the node data.

    Uses 3/(2h) (v_{j+1} - v_j) - (v'_j + v'_{j+1}) / 4.

    Returns:
        np.ndarray: (M-1, n) midpoint derivatives.
    """
    values, slopes = split_coefficients(coeffs, grid)
    return 1.5 / grid.h * (values[1:] - values[:-1]) - 0.25 * (slopes[:-1] + slopes[1:])
