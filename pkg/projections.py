"""
Minimal projections onto the affine feasible set {C v = g} with v(l), v'(l) fixed.

Every projection works on the free coefficients only; rows that reach the fixed end
move their fixed-column contribution to the right-hand side. The metrics are the
Euclidean coefficient metric, a diagonal metric (v - y)^T D (v - y), the H^2 seminorm
and the full H^2 norm.
"""
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse import bmat, csc_matrix
from scipy.sparse.linalg import splu

from constraints import ConstraintDensity
from hermite_fem import split_coefficients

RANK_TOLERANCE = 1e-12
PIVOT_TOLERANCE = 1e-6
CONSISTENCY_TOLERANCE = 1e-8


class ProjectionError(ValueError):
    """Raised when dependent constraint rows contradict the others or the KKT system is singular."""

    def __init__(self, message, indices=()):
        self.indices = list(indices)
        if self.indices:
            message = f"{message} (constraint rows {self.indices})"
        super().__init__(message)


def _check_input(y, cs):
    y = np.asarray(y, dtype=float)
    if y.size != cs.matrix.shape[1]:
        raise ValueError(
            f"Coefficient tuple of length {y.size} does not match constraints on "
            f"{cs.matrix.shape[1]} coefficients"
        )
    return y


def _check_forms(cs, forms):
    if forms.dim != cs.dim or forms.grid.num_nodes != cs.grid.num_nodes:
        raise ValueError("Forms and constraints belong to different discretizations")


def _banded_upper(matrix):
    """Upper banded storage of a symmetric sparse matrix for cholesky_banded."""
    coo = matrix.tocoo()
    upper = coo.col >= coo.row
    rows, cols, data = coo.row[upper], coo.col[upper], coo.data[upper]
    bandwidth = int(np.max(cols - rows)) if rows.size else 0
    banded = np.zeros((bandwidth + 1, matrix.shape[0]))
    np.add.at(banded, (bandwidth + rows - cols, cols), data)
    return banded


def dependent_rows(matrix):
    """
    Indices of constraint rows that are linear combinations of earlier rows.

    Runs a banded Cholesky elimination of C C^T in row order. A row whose pivot
    falls to RANK_TOLERANCE times its diagonal entry is reported and left out of
    the remaining elimination.
    """
    gram = sp.csr_matrix(matrix)
    gram = (gram @ gram.T).tocsr()
    size = gram.shape[0]
    if size == 0:
        return []
    banded = _banded_upper(gram)
    bandwidth = banded.shape[0] - 1

    # factor[j, k] holds L[j, j - bandwidth + k]; the last column is the pivot.
    factor = np.zeros((size, bandwidth + 1))
    dropped = []
    for j in range(size):
        lo = max(0, j - bandwidth)
        row = np.zeros(j - lo + 1)
        for i in range(lo, j + 1):
            row[i - lo] = banded[bandwidth + i - j, j]
        l_row = factor[j, bandwidth - (j - lo):]
        for i in range(lo, j):
            pivot = factor[i, bandwidth]
            if pivot == 0.0:
                continue
            # L[i, m] for m in [lo, i)
            l_i = factor[i, bandwidth - (i - lo): bandwidth]
            l_row[i - lo] = (row[i - lo] - l_i @ l_row[: i - lo]) / pivot
        remainder = row[-1] - l_row[:-1] @ l_row[:-1]
        if row[-1] <= 0.0 or remainder <= RANK_TOLERANCE * row[-1]:
            dropped.append(j)
            l_row[:] = 0.0
        else:
            l_row[-1] = np.sqrt(remainder)
    return dropped


def _free_system(cs):
    """
    C restricted to the free columns, its transpose and the fixed-column block.

    Rows that are linear combinations of the others are left out. The system stays
    equivalent as long as those rows are consistent, which the projections check
    on their result.
    """
    def build():
        free = cs.matrix[:, cs.free].tocsr()
        fixed = cs.matrix[:, cs.fixed].tocsr()
        rows = np.arange(cs.size)
        dropped = []

        factor = None
        try:
            factor = scipy.linalg.cholesky_banded(_banded_upper(free @ free.T), lower=False)
            pivots = np.abs(factor[-1])
            well_posed = pivots.min() > PIVOT_TOLERANCE * pivots.max()
        except np.linalg.LinAlgError:
            well_posed = False

        if not well_posed:
            dropped = dependent_rows(free)
            if not dropped and factor is None:
                raise ProjectionError("Constraint matrix is rank deficient")
            if dropped:
                rows = np.setdiff1d(rows, dropped)
                free, fixed = free[rows], fixed[rows]

        return {
            "free": free,
            "free_t": free.T.tocsr(),
            "fixed": fixed,
            "rows": rows,
            "dropped": np.asarray(dropped, dtype=int),
        }

    return cs.cached("free_system", build)


def _reduced_rhs(y, cs, system):
    return cs.rhs[system["rows"]] - system["fixed"] @ y[cs.fixed]


def _check_dropped(out, cs, system):
    dropped = system["dropped"]
    if dropped.size == 0:
        return out
    defect = cs.matrix[dropped] @ out - cs.rhs[dropped]
    tolerance = CONSISTENCY_TOLERANCE * (1.0 + np.max(np.abs(cs.rhs)))
    bad = dropped[np.abs(defect) > tolerance]
    if bad.size:
        raise ProjectionError("Dependent constraint rows are inconsistent", bad)
    return out


def _gram_factor(cs, inverse, key):
    def build():
        system = _free_system(cs)
        scaled = system["free"] if inverse is None else system["free"] @ sp.diags(inverse)
        try:
            return scipy.linalg.cholesky_banded(
                _banded_upper(scaled @ system["free_t"]), lower=False
            )
        except np.linalg.LinAlgError:
            raise ProjectionError("Constraint matrix is rank deficient", system["dropped"])

    if key is None:
        return build()
    return cs.cached(("gram_factor", key), build)


def _project_diagonal(y, cs, inverse, key):
    y = _check_input(y, cs)
    out = y.copy()
    if cs.size == 0:
        return out
    system = _free_system(cs)
    y_free = y[cs.free]
    defect = system["free"] @ y_free - _reduced_rhs(y, cs, system)
    multipliers = scipy.linalg.cho_solve_banded((_gram_factor(cs, inverse, key), False), defect)
    correction = system["free_t"] @ multipliers
    out[cs.free] = y_free - (correction if inverse is None else inverse * correction)
    return _check_dropped(out, cs, system)


def project_euclidean(y, cs):
    """
    Projection in the Euclidean coefficient metric.

    v_f = y_f - C_f^T (C_f C_f^T)^{-1} (C_f y_f - g_f), with the fixed
    coefficients copied from y.

    Args:
        y (np.ndarray): Coefficient tuple to project.
        cs (ConstraintSet): Constraints of the level.

    Returns:
        np.ndarray: Projected tuple.

    Raises:
        ProjectionError: If C has dependent rows that contradict the others.
    """
    return _project_diagonal(y, cs, None, "euclidean")


def _uniform_per_node(weights, cs):
    full = np.zeros(cs.matrix.shape[1])
    full[cs.free] = weights
    rows = full.reshape(-1, cs.dim)
    return bool(np.all(rows == rows[:, :1]))


def project_diagonal(y, cs, weights, key=None):
    """
    Projection in a diagonal metric (v - y)^T D (v - y).

    v_f = y_f - D_f^{-1} C_f^T (C_f D_f^{-1} C_f^T)^{-1} (C_f y_f - g_f),
    where weights holds the diagonal of D on the free coefficients. For nodal
    constraints and weights that agree over the components of each node this is
    the node-by-node closed form, since each row only touches one node slope.

    Args:
        y (np.ndarray): Coefficient tuple to project.
        cs (ConstraintSet): Constraints of the level.
        weights (np.ndarray): Positive diagonal of D on cs.free.
        key (hashable, optional): Caches the factor of C_f D_f^{-1} C_f^T on cs.

    Raises:
        ValueError: If the weights do not match the free coefficients or are not positive.
        ProjectionError: If C has dependent rows that contradict the others.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != cs.free.shape or not np.all(weights > 0.0):
        raise ValueError(f"Need {cs.free.size} positive metric weights, got shape {weights.shape}")
    if cs.density is ConstraintDensity.NODAL and _uniform_per_node(weights, cs):
        return project_nodal_closed_form(y, cs)
    return _project_diagonal(y, cs, 1.0 / weights, key)


def project_nodal_closed_form(y, cs):
    """
    Euclidean projection for nodal constraints, node by node.

    At each free node the slope moves onto the plane {x : x . r'_i = |r'_i|^2}:
        v'_i = r'_i + y'_i - (y'_i . r'_i / |r'_i|^2) r'_i,
    while node values are left as they are.
    """
    if cs.density is not ConstraintDensity.NODAL:
        raise ValueError(
            f"Closed-form projection needs nodal constraints, got {cs.density.value}"
        )
    y = _check_input(y, cs)
    grid = cs.grid
    values, slopes = split_coefficients(y, grid)
    _, ref_slopes = split_coefficients(cs.reference, grid)

    free_y = slopes[:-1]
    free_r = ref_slopes[:-1]
    ratio = np.einsum("ij,ij->i", free_y, free_r) / np.einsum("ij,ij->i", free_r, free_r)
    new_slopes = slopes.copy()
    new_slopes[:-1] = free_r + free_y - ratio[:, None] * free_r
    return np.concatenate([values, new_slopes]).reshape(-1)


def metric_block(cs, forms, metric):
    """Free-free block of the seminorm ("seminorm") or full H^2 ("h2") Gram matrix."""
    _check_forms(cs, forms)
    if metric == "seminorm":
        source = forms.stiffness_n
    elif metric == "h2":
        source = forms.gram_n
    else:
        raise ValueError(f"No sparse metric named {metric!r}")
    return cs.cached(
        ("metric_block", metric, forms),
        lambda: source[cs.free][:, cs.free].tocsc(),
    )


def _kkt_factor(cs, block, key):
    def build():
        system = _free_system(cs)
        kkt = csc_matrix(bmat([[block, system["free_t"]], [system["free"], None]]))
        try:
            return splu(kkt)
        except RuntimeError as e:
            raise ProjectionError(f"Singular KKT system: {e}", system["dropped"])

    if key is None:
        return build()
    return cs.cached(key, build)


def solve_constrained(block, rhs_free, y, cs, key=None):
    """
    Solve the equality-constrained system on the free coefficients.

        [H    C_f^T] [v_f]   [rhs_free          ]
        [C_f  0    ] [mu ] = [g - C_fixed y_fixed]

    The fixed coefficients of the result are copied from y. With key given, the
    sparse LU factor is cached on cs.

    Returns:
        np.ndarray: Full coefficient tuple.

    Raises:
        ProjectionError: If the KKT system is singular or dependent rows contradict the others.
    """
    y = _check_input(y, cs)
    out = y.copy()
    system = _free_system(cs)
    rhs = np.concatenate([np.asarray(rhs_free, dtype=float), _reduced_rhs(y, cs, system)])
    solution = _kkt_factor(cs, block, key).solve(rhs)
    if not np.all(np.isfinite(solution)):
        raise ProjectionError("Singular KKT system", system["dropped"])
    out[cs.free] = solution[: cs.free.size]
    return _check_dropped(out, cs, system)


def _project_sparse_metric(y, cs, forms, metric):
    y = _check_input(y, cs)
    block = metric_block(cs, forms, metric)
    return solve_constrained(block, block @ y[cs.free], y, cs, key=("kkt_factor", metric, forms))


def project_seminorm(y, cs, forms):
    """
    Projection in the H^2 seminorm (v - y)^T Stiffness (v - y).

    Solves the saddle-point system
        [S_ff  C_f^T] [v_f]   [S_ff y_f]
        [C_f   0    ] [mu ] = [g_f     ]
    on the free coefficients.

    Raises:
        ProjectionError: If the KKT system is singular or dependent rows contradict the others.
    """
    return _project_sparse_metric(y, cs, forms, "seminorm")


def project_h2(y, cs, forms):
    """Projection in the full H^2 norm, the KKT system of project_seminorm with G_ff."""
    return _project_sparse_metric(y, cs, forms, "h2")


def metric_solve(rhs_free, cs, forms, metric):
    """Solve H_ff z = rhs on the free coefficients for a sparse metric, factor cached on cs."""
    factor = cs.cached(
        ("metric_factor", metric, forms),
        lambda: splu(metric_block(cs, forms, metric)),
    )
    return factor.solve(np.asarray(rhs_free, dtype=float))


def stiffness_solve(rhs_free, cs, forms):
    """Solve S_ff z = rhs on the free coefficients, factor cached on cs."""
    return metric_solve(rhs_free, cs, forms, "seminorm")


def gram_solve(rhs_free, cs, forms):
    """Solve G_ff z = rhs with G = Upsilon + Upsilon' + Upsilon'', factor cached on cs."""
    return metric_solve(rhs_free, cs, forms, "h2")

