"""
Fiber model: physical parameters, the force catalog and the per-level quadratic cost.

One implicit Euler step minimizes
    J(v) = omega * ||(v - 2 r_k + r_km1) / tau||^2 + bend * ||d_ss v||^2 - 2 (f, v)
which in coefficient space is v^T A v + b^T v + c.
"""
from dataclasses import dataclass, field

import numpy as np

from config import ModelDefaults
from hermite_fem import infer_dim, interpolate, join_coefficients


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the hanging fiber."""

    omega: float = ModelDefaults.OMEGA
    bend: float = ModelDefaults.BEND
    length: float = ModelDefaults.LENGTH
    end_time: float = ModelDefaults.END_TIME
    dim: int = ModelDefaults.DIM
    gravity_dir: tuple = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"Ambient dimension must be 2 or 3, got {self.dim}")
        for name in ("omega", "bend", "length", "end_time"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"Model parameter {name} must be positive, got {value}")

        gravity = self.gravity_dir
        if gravity is None:
            gravity = ModelDefaults.gravity_dir(self.dim)
        gravity = tuple(float(x) for x in gravity)
        if len(gravity) != self.dim:
            raise ValueError(
                f"Gravity direction has {len(gravity)} components, expected {self.dim}"
            )
        if abs(np.linalg.norm(gravity) - 1.0) > 1e-14:
            raise ValueError(f"Gravity direction must be a unit vector, got {gravity}")
        object.__setattr__(self, "gravity_dir", gravity)

    def with_end_time(self, end_time):
        """Copy of these parameters with another end time."""
        return ModelParams(
            omega=self.omega,
            bend=self.bend,
            length=self.length,
            end_time=end_time,
            dim=self.dim,
            gravity_dir=self.gravity_dir,
        )

    def to_dict(self):
        return {
            "omega": self.omega,
            "bend": self.bend,
            "l": self.length,
            "T": self.end_time,
            "dim": self.dim,
            "gravityDir": list(self.gravity_dir),
        }


FORCE_KINDS = ("caseA", "caseB", "combined", "zero", "tabulated")


@dataclass(frozen=True, eq=False)
class ForceField:
    """
    Time-independent line force f(s) from a fixed catalog.

    Use the named constructors (case_a, case_b, combined, zero, tabulated) rather
    than building one directly.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FORCE_KINDS:
            raise ValueError(f"Unknown force kind {self.kind!r}, expected one of {FORCE_KINDS}")
        if self.dim not in (2, 3):
            raise ValueError(f"Ambient dimension must be 2 or 3, got {self.dim}")

    @classmethod
    def case_a(cls, dim=2):
        """f(s) = (s-1)^3 sin(2 pi (1-s)) e2."""
        return cls("caseA", dim)

    @classmethod
    def case_b(cls, dim=2):
        """f(s) = -exp(-10 (s-0.5)^2) e2."""
        return cls("caseB", dim)

    @classmethod
    def combined(cls, omega, dim=2, f1_scale=-1e3, f2_amplitude=-1e-2):
        """f = f1 e1 + f2(s) e2 with f1 = f1_scale * omega, f2 = f2_amplitude sin(2 pi (1-s))."""
        return cls(
            "combined",
            dim,
            {"f1": f1_scale * omega, "f1Scale": f1_scale, "f2Amplitude": f2_amplitude},
        )

    @classmethod
    def zero(cls, dim=2):
        return cls("zero", dim)

    @classmethod
    def tabulated(cls, s, values):
        """
        Piecewise-linear force through samples.

        Args:
            s (array): Strictly increasing sample positions.
            values (array): (P, n) force samples.
        """
        s = np.asarray(s, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != s.size or s.size < 2:
            raise ValueError(
                f"Tabulated force needs matching (P,) positions and (P, n) values, "
                f"got {s.shape} and {values.shape}"
            )
        if np.any(np.diff(s) <= 0):
            raise ValueError("Tabulated force positions must be strictly increasing")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(values))):
            raise ValueError("Tabulated force has non-finite samples")
        return cls("tabulated", values.shape[1], {"s": s, "values": values})

    @classmethod
    def from_kind(cls, kind, params, options=None):
        """
        Build a catalog force by name for the given model parameters.

        Args:
            kind (str): One of FORCE_KINDS.
            params (ModelParams): Supplies dim and omega.
            options (dict, optional): Kind-specific settings.
        """
        options = options or {}
        if kind == "caseA":
            return cls.case_a(params.dim)
        if kind == "caseB":
            return cls.case_b(params.dim)
        if kind == "zero":
            return cls.zero(params.dim)
        if kind == "combined":
            return cls.combined(
                params.omega,
                params.dim,
                f1_scale=options.get("f1Scale", -1e3),
                f2_amplitude=options.get("f2Amplitude", -1e-2),
            )
        if kind == "tabulated":
            force = cls.tabulated(options.get("s", []), options.get("values", []))
            if force.dim != params.dim:
                raise ValueError(
                    f"Tabulated force has dimension {force.dim}, model has {params.dim}"
                )
            return force
        raise ValueError(f"Unknown force kind {kind!r}, expected one of {FORCE_KINDS}")

    def _components(self, scalar_e1, scalar_e2, s):
        out = np.zeros((s.size, self.dim))
        out[:, 0] = scalar_e1
        out[:, 1] = scalar_e2
        return out

    def value(self, s):
        """Force at position(s); (n,) for scalar s, (P, n) for arrays."""
        pos = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == "caseA":
            out = self._components(0.0, (pos - 1.0) ** 3 * np.sin(2 * np.pi * (1.0 - pos)), pos)
        elif self.kind == "caseB":
            out = self._components(0.0, -np.exp(-10.0 * (pos - 0.5) ** 2), pos)
        elif self.kind == "combined":
            f2 = self.params["f2Amplitude"] * np.sin(2 * np.pi * (1.0 - pos))
            out = self._components(self.params["f1"], f2, pos)
        elif self.kind == "zero":
            out = np.zeros((pos.size, self.dim))
        else:
            table_s = self.params["s"]
            table_v = self.params["values"]
            out = np.stack(
                [np.interp(pos, table_s, table_v[:, c]) for c in range(self.dim)], axis=-1
            )
        return out[0] if np.ndim(s) == 0 else out

    def derivative(self, s):
        """
        Analytic d/ds of the force, or None for tabulated forces.

        Returns None so that interpolation falls back to a central difference.
        """
        pos = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == "caseA":
            angle = 2 * np.pi * (1.0 - pos)
            d2 = 3.0 * (pos - 1.0) ** 2 * np.sin(angle) - 2 * np.pi * (pos - 1.0) ** 3 * np.cos(angle)
            out = self._components(0.0, d2, pos)
        elif self.kind == "caseB":
            d2 = 20.0 * (pos - 0.5) * np.exp(-10.0 * (pos - 0.5) ** 2)
            out = self._components(0.0, d2, pos)
        elif self.kind == "combined":
            d2 = -2 * np.pi * self.params["f2Amplitude"] * np.cos(2 * np.pi * (1.0 - pos))
            out = self._components(0.0, d2, pos)
        elif self.kind == "zero":
            out = np.zeros((pos.size, self.dim))
        else:
            return None
        return out[0] if np.ndim(s) == 0 else out

    def load_tuple(self, grid):
        """Hermite interpolant of the force on the grid (the load tuple)."""
        df = None if self.kind == "tabulated" else self.derivative
        return interpolate(self.value, grid, df=df)

    def to_dict(self):
        if self.kind == "combined":
            options = {"f1Scale": self.params["f1Scale"], "f2Amplitude": self.params["f2Amplitude"]}
        elif self.kind == "tabulated":
            options = {
                "s": self.params["s"].tolist(),
                "values": self.params["values"].tolist(),
            }
        else:
            options = {}
        return {"kind": self.kind, "params": options}


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """J(v) = v^T A v + b^T v + c for one time level."""

    matrix: object = field(repr=False)
    linear: np.ndarray = field(repr=False)
    constant: float
    tau: float
    free: np.ndarray = field(repr=False)


def initial_state(grid, params):
    """
    Straight fiber hanging along gravity: r_0(s) = (l - s) e_g.

    Returns:
        np.ndarray: Coefficient tuple with v_j = (l - s_j) e_g and v'_j = -e_g.
    """
    if abs(grid.length - params.length) > 1e-12 * params.length:
        raise ValueError(
            f"Grid length {grid.length} does not match fiber length {params.length}"
        )
    e_g = np.asarray(params.gravity_dir)
    values = np.outer(params.length - grid.nodes, e_g)
    values[-1] = 0.0
    slopes = np.tile(-e_g, (grid.num_nodes, 1))
    return join_coefficients(values, slopes)


def assemble_cost(r_k, r_km1, force, params, tau, forms, grid):
    """
    Assemble the quadratic cost of the level following r_k.

    Args:
        r_k (np.ndarray): Current state.
        r_km1 (np.ndarray): Previous state.
        force (ForceField): Line force.
        params (ModelParams): Physical parameters.
        tau (float): Time step.
        forms (AssembledForms): FE matrices for the grid.
        grid (Grid): The grid.

    Returns:
        QuadraticCost: A = (omega/tau^2) Mass + bend Stiffness,
            b = 2 Mass ((omega/tau^2) rbar - f), c = (omega/tau^2) rbar^T Mass rbar,
            with rbar = -2 r_k + r_km1.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"Time step must be positive, got {tau}")
    dim = infer_dim(r_k, grid)
    if infer_dim(r_km1, grid) != dim or dim != forms.dim or dim != params.dim:
        raise ValueError("State, forms and model dimensions do not agree")
    if force.dim != dim:
        raise ValueError(f"Force has dimension {force.dim}, model has {dim}")

    inertia = params.omega / tau**2
    r_bar = -2.0 * np.asarray(r_k, dtype=float) + np.asarray(r_km1, dtype=float)
    load = force.load_tuple(grid)
    mass_r_bar = forms.mass_n @ r_bar
    return QuadraticCost(
        matrix=(inertia * forms.mass_n + params.bend * forms.stiffness_n).tocsr(),
        linear=2.0 * (inertia * mass_r_bar - forms.mass_n @ load),
        constant=float(inertia * (r_bar @ mass_r_bar)),
        tau=float(tau),
        free=grid.free_indices(dim),
    )


def _check_size(cost, v):
    v = np.asarray(v, dtype=float)
    if v.shape != cost.linear.shape:
        raise ValueError(
            f"Coefficient tuple of length {v.size} does not match cost of size {cost.linear.size}"
        )
    return v


def eval_cost(cost, v):
    """J(v) = v^T A v + b^T v + c."""
    v = _check_size(cost, v)
    return float(v @ (cost.matrix @ v) + cost.linear @ v + cost.constant)


def full_gradient(cost, v):
    """2 A v + b including the Dirichlet-fixed entries."""
    v = _check_size(cost, v)
    return 2.0 * (cost.matrix @ v) + cost.linear


def grad_cost(cost, v):
    """Coefficient gradient 2 A v + b with the Dirichlet-fixed entries zeroed."""
    full = full_gradient(cost, v)
    grad = np.zeros_like(full)
    grad[cost.free] = full[cost.free]
    return grad


def cost_change(cost, v, w):
    """
    J(w) - J(v) computed from the difference w - v.

    The constant term c never enters.
    """
    v = _check_size(cost, v)
    step = _check_size(cost, w) - v
    return float(step @ full_gradient(cost, v) + step @ (cost.matrix @ step))
