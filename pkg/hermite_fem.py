"""
Cubic Hermite finite elements on a uniform 1-D grid.

Coefficient tuples are flat float arrays laid out as (v_1..v_M, v'_1..v'_M), each
entry an n-vector, so a tuple reshaped to (2M, n) has one row per scalar basis
function (psi_1..psi_M, phi_1..phi_M). Vector-valued matrices are the scalar ones
expanded with kron(., I_n).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, length] with num_nodes nodes."""

    length: float
    num_nodes: int
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"Grid length must be positive, got {self.length}")
        if int(self.num_nodes) != self.num_nodes or self.num_nodes < 3:
            raise ValueError(f"Grid needs at least 3 nodes, got {self.num_nodes}")
        h = self.length / (self.num_nodes - 1)
        nodes = h * np.arange(self.num_nodes, dtype=float)
        nodes[-1] = self.length
        nodes.setflags(write=False)
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nodes", nodes)

    @property
    def num_cells(self):
        return self.num_nodes - 1

    def coefficient_size(self, dim):
        """Length of a coefficient tuple for ambient dimension dim."""
        return 2 * self.num_nodes * dim

    def fixed_indices(self, dim):
        """
        Indices of the Dirichlet-fixed coefficients (v_M and v'_M).

        Args:
            dim (int): Ambient dimension.

        Returns:
            np.ndarray: 2*dim flat indices.
        """
        M = self.num_nodes
        value = (M - 1) * dim + np.arange(dim)
        slope = (2 * M - 1) * dim + np.arange(dim)
        return np.concatenate([value, slope])

    def free_indices(self, dim):
        """Indices of the coefficients left to the optimizer."""
        mask = np.ones(self.coefficient_size(dim), dtype=bool)
        mask[self.fixed_indices(dim)] = False
        return np.flatnonzero(mask)


def build_grid(length, num_nodes):
    """
    Build the uniform grid s_j = (j-1)h, h = length/(num_nodes-1).

    Args:
        length (float): Fiber length l > 0.
        num_nodes (int): Node count M >= 3.

    Returns:
        Grid: The grid.

    Raises:
        ValueError: If length <= 0 or num_nodes < 3.
    """
    return Grid(float(length), num_nodes)


def infer_dim(coeffs, grid):
    """
    Infer the ambient dimension of a coefficient tuple and validate it.

    Raises:
        ValueError: If the length does not match the grid or entries are not finite.
    """
    coeffs = np.asarray(coeffs)
    size = 2 * grid.num_nodes
    if coeffs.ndim != 1 or coeffs.size == 0 or coeffs.size % size:
        raise ValueError(
            f"Coefficient tuple of length {coeffs.size} does not match a grid with "
            f"{grid.num_nodes} nodes"
        )
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("Coefficient tuple has non-finite entries")
    return coeffs.size // size


def split_coefficients(coeffs, grid):
    """
    Split a tuple into node values and node slopes.

    Returns:
        tuple: (values, slopes), each an (M, n) view.
    """
    dim = infer_dim(coeffs, grid)
    rows = np.asarray(coeffs).reshape(2 * grid.num_nodes, dim)
    return rows[: grid.num_nodes], rows[grid.num_nodes :]


def join_coefficients(values, slopes):
    """Inverse of split_coefficients."""
    values = np.asarray(values, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    if values.shape != slopes.shape:
        raise ValueError(f"Shape mismatch: values {values.shape}, slopes {slopes.shape}")
    return np.concatenate([values, slopes]).reshape(-1)


def _reference_basis(xi, h, order):
    """
    Local basis [psi_L, phi_L, psi_R, phi_R] and its s-derivatives at xi in [-1, 1].

    Returns:
        np.ndarray: (P, 4) array.
    """
    xi = np.asarray(xi, dtype=float)
    if order == 0:
        cols = [
            (2.0 - 3.0 * xi + xi**3) / 4.0,
            h * (1.0 - xi - xi**2 + xi**3) / 8.0,
            (2.0 + 3.0 * xi - xi**3) / 4.0,
            h * (-1.0 - xi + xi**2 + xi**3) / 8.0,
        ]
    elif order == 1:
        cols = [
            3.0 * (xi**2 - 1.0) / (2.0 * h),
            (-1.0 - 2.0 * xi + 3.0 * xi**2) / 4.0,
            3.0 * (1.0 - xi**2) / (2.0 * h),
            (-1.0 + 2.0 * xi + 3.0 * xi**2) / 4.0,
        ]
    elif order == 2:
        cols = [
            6.0 * xi / h**2,
            (3.0 * xi - 1.0) / h,
            -6.0 * xi / h**2,
            (3.0 * xi + 1.0) / h,
        ]
    else:
        raise ValueError(f"Derivative order must be 0, 1 or 2, got {order}")
    return np.stack(cols, axis=-1)


def cell_dofs(grid, cells):
    """Scalar basis indices [psi_j, phi_j, psi_j+1, phi_j+1] of each cell, (P, 4)."""
    cells = np.asarray(cells, dtype=int)
    M = grid.num_nodes
    return np.stack([cells, M + cells, cells + 1, M + cells + 1], axis=-1)


def locate(grid, s):
    """
    Map positions to (cell index, reference coordinate).

    Args:
        grid (Grid): The grid.
        s (float or array): Positions in [0, l].

    Returns:
        tuple: (cells, xi) arrays.

    Raises:
        ValueError: If a position lies outside [0, l].
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    slack = 1e-12 * grid.length
    outside = (s < -slack) | (s > grid.length + slack) | ~np.isfinite(s)
    if np.any(outside):
        raise ValueError(
            f"Position {s[outside][0]} outside [0, {grid.length}]"
        )
    s = np.clip(s, 0.0, grid.length)
    cells = np.minimum((s / grid.h).astype(int), grid.num_cells - 1)
    xi = 2.0 * (s - grid.nodes[cells]) / grid.h - 1.0
    return cells, np.clip(xi, -1.0, 1.0)


def basis_matrix(grid, cells, xi, order=0):
    """
    Sparse (P, 2M) matrix of scalar basis functions (or derivatives) at points.

    Structural zeros of the Hermite basis (e.g. slopes of psi at nodes) are dropped.
    """
    cells = np.asarray(cells, dtype=int)
    local = _reference_basis(xi, grid.h, order)
    rows = np.repeat(np.arange(cells.size), 4)
    matrix = sp.csr_matrix(
        (local.reshape(-1), (rows, cell_dofs(grid, cells).reshape(-1))),
        shape=(cells.size, 2 * grid.num_nodes),
    )
    matrix.eliminate_zeros()
    return matrix


def evaluation_matrix(grid, s, order=0):
    """basis_matrix at arbitrary positions s."""
    cells, xi = locate(grid, s)
    return basis_matrix(grid, cells, xi, order)


def eval_fe(coeffs, grid, s, order=0):
    """
    Evaluate the Hermite interpolant or one of its first two derivatives.

    Args:
        coeffs (np.ndarray): Coefficient tuple.
        grid (Grid): The grid.
        s (float or array): Position(s) in [0, l].
        order (int): 0 (value), 1 (first derivative) or 2 (second derivative).

    Returns:
        np.ndarray: (n,) for scalar s, (P, n) for an array of positions.
    """
    dim = infer_dim(coeffs, grid)
    rows = np.asarray(coeffs, dtype=float).reshape(2 * grid.num_nodes, dim)
    out = evaluation_matrix(grid, s, order) @ rows
    return out[0] if np.ndim(s) == 0 else out


def composite_gauss(grid, num_points=5):
    """
    Composite Gauss-Legendre rule with num_points per cell.

    Returns:
        tuple: (cells, xi, weights, points) flattened cell-major; weights include h/2.
    """
    ref_xi, ref_w = np.polynomial.legendre.leggauss(num_points)
    cells = np.repeat(np.arange(grid.num_cells), num_points)
    xi = np.tile(ref_xi, grid.num_cells)
    weights = np.tile(ref_w, grid.num_cells) * grid.h / 2.0
    points = grid.nodes[cells] + (xi + 1.0) * grid.h / 2.0
    return cells, xi, weights, points


# Closed-form element matrices in local order [psi_L, phi_L, psi_R, phi_R].

def _element_mass(h):
    return h / 420.0 * np.array([
        [156.0, 22.0 * h, 54.0, -13.0 * h],
        [22.0 * h, 4.0 * h**2, 13.0 * h, -3.0 * h**2],
        [54.0, 13.0 * h, 156.0, -22.0 * h],
        [-13.0 * h, -3.0 * h**2, -22.0 * h, 4.0 * h**2],
    ])


def _element_grad_mass(h):
    return 1.0 / (30.0 * h) * np.array([
        [36.0, 3.0 * h, -36.0, 3.0 * h],
        [3.0 * h, 4.0 * h**2, -3.0 * h, -h**2],
        [-36.0, -3.0 * h, 36.0, -3.0 * h],
        [3.0 * h, -h**2, -3.0 * h, 4.0 * h**2],
    ])


def _element_stiffness(h):
    return 1.0 / h**3 * np.array([
        [12.0, 6.0 * h, -12.0, 6.0 * h],
        [6.0 * h, 4.0 * h**2, -6.0 * h, 2.0 * h**2],
        [-12.0, -6.0 * h, 12.0, -6.0 * h],
        [6.0 * h, 2.0 * h**2, -6.0 * h, 4.0 * h**2],
    ])


def _assemble_scalar(grid, element):
    dofs = cell_dofs(grid, np.arange(grid.num_cells))
    rows = np.repeat(dofs, 4, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 4)).reshape(-1)
    data = np.tile(element.reshape(-1), grid.num_cells)
    size = 2 * grid.num_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(size, size))


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """
    Mass (Upsilon), gradient mass (Upsilon') and stiffness (Upsilon'') matrices.

    The scalar matrices are 2M x 2M; the *_n variants act on coefficient tuples of
    ambient dimension dim.
    """

    grid: Grid
    dim: int
    mass: sp.csr_matrix = field(repr=False)
    grad_mass: sp.csr_matrix = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)
    mass_n: sp.csr_matrix = field(repr=False)
    grad_mass_n: sp.csr_matrix = field(repr=False)
    stiffness_n: sp.csr_matrix = field(repr=False)
    gram_n: sp.csr_matrix = field(repr=False)


def assemble_forms(grid, dim=2):
    """
    Assemble the exact basis-product integrals on the grid.

    Args:
        grid (Grid): The grid.
        dim (int): Ambient dimension n of the coefficient tuples.

    Returns:
        AssembledForms: Scalar and vector-expanded matrices.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"Ambient dimension must be 1, 2 or 3, got {dim}")
    h = grid.h
    mass = _assemble_scalar(grid, _element_mass(h))
    grad_mass = _assemble_scalar(grid, _element_grad_mass(h))
    stiffness = _assemble_scalar(grid, _element_stiffness(h))
    eye = sp.identity(dim, format="csr")
    mass_n = sp.kron(mass, eye, format="csr")
    grad_mass_n = sp.kron(grad_mass, eye, format="csr")
    stiffness_n = sp.kron(stiffness, eye, format="csr")
    return AssembledForms(
        grid=grid,
        dim=dim,
        mass=mass,
        grad_mass=grad_mass,
        stiffness=stiffness,
        mass_n=mass_n,
        grad_mass_n=grad_mass_n,
        stiffness_n=stiffness_n,
        gram_n=(mass_n + grad_mass_n + stiffness_n).tocsr(),
    )


def _central_difference(f, s, step, length):
    lo = max(s - step, 0.0)
    hi = min(s + step, length)
    return (np.atleast_1d(f(hi)) - np.atleast_1d(f(lo))) / (hi - lo)


def interpolate(f, grid, df=None):
    """
    Hermite interpolant of a scalar or vector function.

    Args:
        f (callable): s -> value (scalar or n-vector).
        grid (Grid): The grid.
        df (callable, optional): s -> derivative. If omitted, a central difference
            with step h/100 is used (one-sided at the ends).

    Returns:
        np.ndarray: Coefficient tuple with v_j = f(s_j), v'_j = f'(s_j).

    Raises:
        ValueError: If a sample is not finite.
    """
    values = np.array([np.atleast_1d(f(s)) for s in grid.nodes], dtype=float)
    if df is not None:
        slopes = np.array([np.atleast_1d(df(s)) for s in grid.nodes], dtype=float)
    else:
        step = grid.h / 100.0
        slopes = np.array(
            [_central_difference(f, s, step, grid.length) for s in grid.nodes],
            dtype=float,
        )
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(slopes))):
        raise ValueError("Interpolated function has non-finite samples")
    return join_coefficients(values, slopes)


def _quadratic_form(matrix, coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size != matrix.shape[0]:
        raise ValueError(
            f"Coefficient tuple of length {coeffs.size} does not match forms of size "
            f"{matrix.shape[0]}"
        )
    return max(float(coeffs @ (matrix @ coeffs)), 0.0)


def h2_norm(coeffs, forms):
    """Full H^2 norm sqrt(v^T (Upsilon + Upsilon' + Upsilon'') v)."""
    return np.sqrt(_quadratic_form(forms.gram_n, coeffs))


def h2_seminorm(coeffs, forms):
    """H^2 seminorm sqrt(v^T Upsilon'' v)."""
    return np.sqrt(_quadratic_form(forms.stiffness_n, coeffs))


def l2_norm(coeffs, forms):
    """L^2 norm sqrt(v^T Upsilon v)."""
    return np.sqrt(_quadratic_form(forms.mass_n, coeffs))
