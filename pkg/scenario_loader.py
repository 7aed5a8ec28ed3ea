"""
JSON scenario and study files.

Scenario file:
    {
      "model": {"omega", "bend", "l", "T", "dim", "gravityDir"},
      "grid": {"M"},
      "time": {"tau", "literalStart"},
      "force": {"kind", "params"},
      "constraints": {"density"},
      "optimizer": {"tolA", "tolR", "maxIter", "sigma0", "beta", "c", "sigmaMin",
                    "projection", "gradientMetric", "stationarityNorm"}
    }
Only force.kind is required (plus time.tau for simulations); everything else
falls back to the defaults in config.py. Study files add a "study" section.
"""
import json
from dataclasses import dataclass

from config import GridDefaults, ModelDefaults, OptimizerDefaults, StudyConfig
from constraints import ConstraintDensity
from fiber_model import FORCE_KINDS, ForceField, ModelParams
from optimizer import OptimizerConfig
from time_stepper import Scenario


class ConfigError(ValueError):
    """Raised for a missing, unknown or ill-typed configuration key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


SECTIONS = {
    "model": {"omega", "bend", "l", "T", "dim", "gravityDir"},
    "grid": {"M"},
    "time": {"tau", "literalStart"},
    "force": {"kind", "params"},
    "constraints": {"density"},
    "optimizer": {
        "tolA", "tolR", "maxIter", "sigma0", "beta", "c", "sigmaMin",
        "projection", "gradientMetric", "stationarityNorm",
    },
    "study": {"case", "densities", "tauCount", "tStar", "referenceIndex", "tau", "horizon"},
}

DEFAULT_DENSITIES = {
    "convergence": (ConstraintDensity.NODAL,),
    "elongation": (ConstraintDensity.NODAL, ConstraintDensity.HALF),
    "bound": tuple(ConstraintDensity),
}


def _section(data, name, required=False):
    if name not in data:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    section = data[name]
    if not isinstance(section, dict):
        raise ConfigError(name, f"expected an object, got {type(section).__name__}")
    unknown = sorted(set(section) - SECTIONS[name])
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    return section


def _number(section, prefix, key, default, integer=False, positive=True):
    path = f"{prefix}.{key}"
    if key not in section:
        if default is None:
            raise ConfigError(path, "missing key")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _choice(section, prefix, key, default, choices):
    path = f"{prefix}.{key}"
    value = section.get(key, default)
    if value not in choices:
        raise ConfigError(path, f"expected one of {list(choices)}, got {value!r}")
    return value


def _flag(section, prefix, key, default):
    value = section.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{prefix}.{key}", f"expected true or false, got {value!r}")
    return value


def _density(value, path):
    try:
        return ConstraintDensity.from_name(value)
    except ValueError as e:
        raise ConfigError(path, str(e))


def parse_model(data):
    model = _section(data, "model")
    gravity = model.get("gravityDir")
    if gravity is not None and (
        not isinstance(gravity, list)
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in gravity)
    ):
        raise ConfigError("model.gravityDir", f"expected a list of numbers, got {gravity!r}")
    dim = _number(model, "model", "dim", ModelDefaults.DIM, integer=True)
    try:
        return ModelParams(
            omega=_number(model, "model", "omega", ModelDefaults.OMEGA),
            bend=_number(model, "model", "bend", ModelDefaults.BEND),
            length=_number(model, "model", "l", ModelDefaults.LENGTH),
            end_time=_number(model, "model", "T", ModelDefaults.END_TIME),
            dim=dim,
            gravity_dir=tuple(gravity) if gravity is not None else None,
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("model", str(e))


def parse_optimizer(data):
    section = _section(data, "optimizer")
    beta = _number(section, "optimizer", "beta", OptimizerDefaults.BETA)
    if not beta < 1.0:
        raise ConfigError("optimizer.beta", f"must lie in (0, 1), got {beta!r}")
    try:
        return OptimizerConfig(
            tol_a=_number(section, "optimizer", "tolA", OptimizerDefaults.TOL_A),
            tol_r=_number(section, "optimizer", "tolR", OptimizerDefaults.TOL_R),
            max_iter=_number(section, "optimizer", "maxIter", OptimizerDefaults.MAX_ITER, integer=True),
            sigma0=_number(section, "optimizer", "sigma0", OptimizerDefaults.SIGMA0),
            beta=beta,
            armijo_c=_number(section, "optimizer", "c", OptimizerDefaults.ARMIJO_C),
            sigma_min=_number(section, "optimizer", "sigmaMin", OptimizerDefaults.SIGMA_MIN),
            projection=_choice(section, "optimizer", "projection", OptimizerDefaults.PROJECTION, ("euclidean", "diagonal", "seminorm", "h2")),
            gradient_metric=_choice(section, "optimizer", "gradientMetric", OptimizerDefaults.GRADIENT_METRIC, ("euclidean", "riesz", "h2")),
            stationarity_norm=_choice(section, "optimizer", "stationarityNorm", OptimizerDefaults.STATIONARITY_NORM, ("full", "seminorm")),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("optimizer", str(e))


def parse_force(data, params):
    section = _section(data, "force", required=True)
    kind = _choice(section, "force", "kind", None, FORCE_KINDS)
    options = section.get("params", {})
    if not isinstance(options, dict):
        raise ConfigError("force.params", f"expected an object, got {options!r}")
    try:
        return ForceField.from_kind(kind, params, options)
    except ValueError as e:
        raise ConfigError("force.params", str(e))


def parse_scenario(data, require_tau=True):
    """
    Build a Scenario from a parsed JSON object.

    Raises:
        ConfigError: On any bad key or value; the message starts with the key path.
    """
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], "unknown section")

    params = parse_model(data)
    grid = _section(data, "grid")
    num_nodes = _number(grid, "grid", "M", GridDefaults.NODES, integer=True)
    if num_nodes < 3:
        raise ConfigError("grid.M", f"need at least 3 nodes, got {num_nodes}")
    time_section = _section(data, "time", required=require_tau)
    tau = _number(time_section, "time", "tau", None if require_tau else StudyConfig.TAU_BASE)
    literal_start = _flag(time_section, "time", "literalStart", False)
    constraints = _section(data, "constraints")
    density = _density(constraints.get("density", "nodal"), "constraints.density")

    return Scenario(
        force=parse_force(data, params),
        params=params,
        tau=tau,
        num_nodes=num_nodes,
        density=density,
        config=parse_optimizer(data),
        literal_start=literal_start,
    )


@dataclass(frozen=True)
class StudySpec:
    """
    Settings of a study run, merged from the study section and the scenario sections.

    densities is None when the file does not list any; see densities_for.
    """

    case: str
    densities: tuple
    taus: tuple
    t_star: float
    reference_index: int
    bound_tau: float
    horizon: float
    base: Scenario

    def densities_for(self, kind):
        """Listed densities, or the default set of a study kind."""
        if self.densities is not None:
            return self.densities
        return DEFAULT_DENSITIES[kind]


def parse_study(data):
    """Build a StudySpec from a parsed JSON object."""
    study = _section(data, "study")
    case = _choice(study, "study", "case", "A", ("A", "B", "caseA", "caseB"))
    scenario_data = {k: v for k, v in data.items() if k != "study"}
    scenario_data.setdefault("force", {"kind": "caseA" if case in ("A", "caseA") else "caseB"})
    base = parse_scenario(scenario_data, require_tau=False)

    names = study.get("densities")
    if names is None:
        densities = None
    elif not isinstance(names, list) or not names:
        raise ConfigError("study.densities", f"expected a non-empty list, got {names!r}")
    else:
        densities = tuple(_density(name, "study.densities") for name in names)

    count = _number(study, "study", "tauCount", StudyConfig.TAU_COUNT, integer=True)
    reference_index = _number(
        study, "study", "referenceIndex", min(StudyConfig.REFERENCE_INDEX, count - 1),
        integer=True, positive=False,
    )
    if not 0 <= reference_index < count:
        raise ConfigError("study.referenceIndex", f"must lie in 0..{count - 1}, got {reference_index}")
    # time.tau was validated by parse_scenario; it is the coarsest step of the study
    base_tau = base.tau

    return StudySpec(
        case=case,
        densities=densities,
        taus=tuple(StudyConfig.taus(count=count, base=base_tau)),
        t_star=_number(study, "study", "tStar", StudyConfig.T_STAR),
        reference_index=reference_index,
        bound_tau=_number(study, "study", "tau", StudyConfig.BOUND_TAU),
        horizon=_number(study, "study", "horizon", StudyConfig.BOUND_HORIZON),
        base=base,
    )


def _read_json(path):
    with open(path, "r") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("<root>", f"invalid JSON: {e}")


def load_scenario(path):
    """
    Read a scenario file.

    Raises:
        OSError: If the file cannot be read.
        ConfigError: If its contents are invalid.
    """
    return parse_scenario(_read_json(path))


def load_study(path):
    """Read a study file (see parse_study)."""
    return parse_study(_read_json(path))
