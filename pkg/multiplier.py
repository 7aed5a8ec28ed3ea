"""
Lagrange multiplier diagnostics.

The linearized constraint e'[phi] = 2 d_s r_k . d_s phi has the explicit right inverse
    phi(s) = -int_s^l psi(u) d_u r_k / (2 |d_u r_k|^2) du,
which turns the multiplier into the number -J'(r_next)[phi] for any test function psi
with psi(l) = 0.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from constraints import DEGENERATE_TANGENT, DegenerateStateError
from hermite_fem import basis_matrix, composite_gauss, infer_dim, join_coefficients

QUADRATURE_POINTS = 5


@dataclass(frozen=True, eq=False)
class SampledField:
    """A vector field known at quadrature points and at the grid nodes."""

    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    derivatives: np.ndarray = field(repr=False)
    node_values: np.ndarray = field(repr=False)
    node_slopes: np.ndarray = field(repr=False)

    @property
    def coefficients(self):
        """Hermite interpolant of the field."""
        return join_coefficients(self.node_values, self.node_slopes)


def _tangents(r_k, grid, cells, xi):
    dim = infer_dim(r_k, grid)
    rows = np.asarray(r_k, dtype=float).reshape(2 * grid.num_nodes, dim)
    return basis_matrix(grid, cells, xi, order=1) @ rows


def _check_tangents(tangents, positions):
    norms_sq = np.einsum("ij,ij->i", tangents, tangents)
    norms = np.sqrt(norms_sq)
    bad = np.flatnonzero(norms < DEGENERATE_TANGENT)
    if bad.size:
        raise DegenerateStateError(positions[bad[0]], norms[bad[0]])
    return norms_sq


def inverse_constraint(psi, r_k, grid, num_points=QUADRATURE_POINTS):
    """
    Explicit preimage of psi under the linearized constraint of r_k.

    Args:
        psi (callable or array): Scalar function of s with psi(l) = 0, or its
            samples at the composite Gauss points (cell-major, num_points per cell).
        r_k (np.ndarray): Reference state.
        grid (Grid): The grid.
        num_points (int): Gauss points per cell.

    Returns:
        SampledField: phi at the quadrature points and nodes, with phi(l) = 0.

    Raises:
        ValueError: If a callable psi does not vanish at s = l, or samples have
            the wrong length.
        DegenerateStateError: If |d_s r_k| < 1e-9 at a quadrature point or node.
    """
    cells, xi, weights, points = composite_gauss(grid, num_points)
    ref_xi = xi[:num_points]

    if callable(psi):
        samples = np.array([float(psi(s)) for s in points])
        end_value = float(psi(grid.length))
        scale = 1.0 + np.max(np.abs(samples), initial=0.0)
        if abs(end_value) > 1e-12 * scale:
            raise ValueError(f"Test function must vanish at s = l, got psi(l) = {end_value}")
        node_psi = np.array([float(psi(s)) for s in grid.nodes])
    else:
        samples = np.asarray(psi, dtype=float).reshape(-1)
        if samples.size != points.size:
            raise ValueError(
                f"Expected {points.size} samples of psi, got {samples.size}"
            )
        node_psi = None

    tangents = _tangents(r_k, grid, cells, xi)
    norms_sq = _check_tangents(tangents, points)
    derivatives = (samples / (2.0 * norms_sq))[:, None] * tangents
    dim = tangents.shape[1]

    # Exact antiderivative of the per-cell Legendre fit, anchored at the right cell end.
    per_cell = derivatives.reshape(grid.num_cells, num_points, dim)
    local = np.empty_like(per_cell)
    cell_totals = np.empty((grid.num_cells, dim))
    fitted_ends = np.empty((grid.num_cells, 2))
    psi_cells = samples.reshape(grid.num_cells, num_points)
    for c in range(grid.num_cells):
        coef = legendre.legfit(ref_xi, per_cell[c], num_points - 1)
        anti = legendre.legint(coef, lbnd=1.0)
        local[c] = -0.5 * grid.h * legendre.legval(ref_xi, anti).T
        cell_totals[c] = -0.5 * grid.h * legendre.legval(-1.0, anti)
        psi_coef = legendre.legfit(ref_xi, psi_cells[c], num_points - 1)
        fitted_ends[c] = legendre.legval(np.array([-1.0, 1.0]), psi_coef)

    # tails[j] = integral of d phi from s_j to l
    tails = np.zeros((grid.num_nodes, dim))
    tails[:-1] = np.cumsum(cell_totals[::-1], axis=0)[::-1]
    values = -(local + tails[1:, None, :]).reshape(-1, dim)
    node_values = -tails

    if node_psi is None:
        node_psi = np.append(fitted_ends[:, 0], fitted_ends[-1, 1])
    node_cells = np.minimum(np.arange(grid.num_nodes), grid.num_cells - 1)
    node_xi = np.where(np.arange(grid.num_nodes) == grid.num_nodes - 1, 1.0, -1.0)
    node_tangents = _tangents(r_k, grid, node_cells, node_xi)
    node_norms_sq = _check_tangents(node_tangents, grid.nodes)
    node_slopes = (node_psi / (2.0 * node_norms_sq))[:, None] * node_tangents

    return SampledField(
        points=points,
        weights=weights,
        values=values,
        derivatives=derivatives,
        node_values=node_values,
        node_slopes=node_slopes,
    )


def lambda_action(r_next, r_k, r_km1, force, params, tau, g, grid, forms, num_points=QUADRATURE_POINTS):
    """
    Multiplier action -J'(r_next)[phi] with phi = inverse_constraint(g, r_k).

    Evaluates
        -2 (omega (D^2 r_next, phi) + bend (d_ss r_next, d_ss phi_h) - (f, phi))
    by composite Gauss quadrature, where D^2 r_next = (r_next - 2 r_k + r_km1) / tau^2
    and phi_h is the Hermite interpolant of phi.

    Returns:
        float: The action on the test function g.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"Time step must be positive, got {tau}")
    dim = infer_dim(r_next, grid)
    if forms.dim != dim:
        raise ValueError(f"Forms have dimension {forms.dim}, states have {dim}")
    phi = inverse_constraint(g, r_k, grid, num_points)

    cells, xi, weights, points = composite_gauss(grid, num_points)
    values_at = basis_matrix(grid, cells, xi, order=0)
    curvature_at = basis_matrix(grid, cells, xi, order=2)
    shape = (2 * grid.num_nodes, dim)

    acceleration = (
        np.asarray(r_next, dtype=float) - 2.0 * np.asarray(r_k, dtype=float) + np.asarray(r_km1, dtype=float)
    ) / tau**2
    inertia = values_at @ acceleration.reshape(shape)
    bending = curvature_at @ np.asarray(r_next, dtype=float).reshape(shape)
    phi_curvature = curvature_at @ phi.coefficients.reshape(shape)
    load = force.value(points)

    inertia_term = np.sum(weights * np.einsum("ij,ij->i", inertia, phi.values))
    bending_term = np.sum(weights * np.einsum("ij,ij->i", bending, phi_curvature))
    load_term = np.sum(weights * np.einsum("ij,ij->i", load, phi.values))
    return float(-2.0 * (params.omega * inertia_term + params.bend * bending_term - load_term))
