"""
Trajectory files and report CSVs.

A trajectory file is a single JSON header line followed by CSV rows:

    {"density":"nodal","dim":2,"format":"fiber-trajectory/1","grid":{"M":300,"l":1.0},...}
    level,t,dl,c0,c1,...
    0,0.0,0.0,...

Each data row is one time level: its index, time, elongation and the flat
coefficient tuple. Floats are written with repr, the shortest decimal that reads
back to the same double, so load followed by save reproduces the file byte for byte.
"""
import csv
import io
import json

import numpy as np
import pandas as pd

from constraints import ConstraintDensity
from fiber_model import ModelParams
from hermite_fem import build_grid
from time_stepper import Trajectory, check_elongation_bound

FORMAT = "fiber-trajectory/1"


def _float(x):
    return repr(float(x))


def trajectory_header(traj):
    """JSON-serializable header of a trajectory file."""
    return {
        "format": FORMAT,
        "params": traj.params.to_dict(),
        "grid": {"M": traj.grid.num_nodes, "l": traj.grid.length},
        "tau": float(traj.tau),
        "density": traj.density.value,
        "dim": traj.params.dim,
        "metadata": traj.metadata,
    }


def dumps_trajectory(traj):
    """
    Serialize a trajectory to the text of a trajectory file.

    Args:
        traj (Trajectory): A full or partial trajectory.

    Returns:
        str: Header line plus one CSV row per time level.
    """
    buffer = io.StringIO()
    buffer.write(json.dumps(trajectory_header(traj), sort_keys=True, separators=(",", ":")))
    buffer.write("\n")

    size = traj.grid.coefficient_size(traj.params.dim)
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["level", "t", "dl"] + [f"c{i}" for i in range(size)])
    for level, (t, dl, state) in enumerate(zip(traj.times, traj.elongations, traj.states)):
        writer.writerow([str(level), _float(t), _float(dl)] + [_float(x) for x in state])
    return buffer.getvalue()


def loads_trajectory(text):
    """
    Parse the text of a trajectory file.

    Returns:
        Trajectory: States, times and elongations; solver statistics are not stored.

    Raises:
        ValueError: If the header or a row is malformed.
    """
    header_line, _, body = text.partition("\n")
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid trajectory header: {e}")
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise ValueError(f"Not a trajectory file (expected format {FORMAT!r})")

    try:
        p = header["params"]
        params = ModelParams(
            omega=p["omega"],
            bend=p["bend"],
            length=p["l"],
            end_time=p["T"],
            dim=p["dim"],
            gravity_dir=tuple(p["gravityDir"]),
        )
        grid = build_grid(header["grid"]["l"], header["grid"]["M"])
        density = ConstraintDensity.from_name(header["density"])
        tau = float(header["tau"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"Incomplete trajectory header: {e!r}")

    rows = list(csv.reader(io.StringIO(body)))
    size = grid.coefficient_size(params.dim)
    if not rows or rows[0][:3] != ["level", "t", "dl"] or len(rows[0]) != 3 + size:
        raise ValueError(f"Trajectory table must have columns level, t, dl and {size} coefficients")

    times, elongations, states = [], [], []
    for number, row in enumerate(rows[1:]):
        if len(row) != 3 + size or int(row[0]) != number:
            raise ValueError(f"Malformed trajectory row {number}")
        times.append(float(row[1]))
        elongations.append(float(row[2]))
        states.append(np.array([float(x) for x in row[3:]]))
    if not states:
        raise ValueError("Trajectory file has no time levels")

    return Trajectory(
        params=params,
        grid=grid,
        tau=tau,
        density=density,
        times=np.array(times),
        states=states,
        elongations=elongations,
        metadata=header.get("metadata", {}),
    )


def save_trajectory(traj, path):
    """Write a trajectory file."""
    with open(path, "w", newline="") as f:
        f.write(dumps_trajectory(traj))


def load_trajectory(path):
    """
    Read a trajectory file.

    Raises:
        OSError: If the file cannot be read.
        ValueError: If it is not a valid trajectory file.
    """
    with open(path, "r", newline="") as f:
        return loads_trajectory(f.read())


def write_report(frame, path):
    """Write a report DataFrame as CSV with repr floats and empty cells for missing values."""
    frame.to_csv(path, index=False, lineterminator="\n", float_format=_float)


def elongation_frame(traj):
    """Per-level elongation against the t tau l bound."""
    series = check_elongation_bound(traj)
    return pd.DataFrame(
        {
            "t": [row.t for row in series.rows],
            "dl": [row.dl for row in series.rows],
            "bound": [row.bound for row in series.rows],
            "satisfied": [row.satisfied for row in series.rows],
        }
    )


STATS_COLUMNS = [
    "level", "t", "iterations", "initial_stationarity", "final_stationarity",
    "final_cost", "monotone", "wall_ms",
]


def stats_frame(traj, timings=False):
    """
    Solver statistics of every solved level.

    Args:
        traj (Trajectory): A trajectory returned by time_stepper.run.
        timings (bool): Fill the wall_ms column; left empty otherwise.
    """
    rows = []
    for level, (stats, report, wall_ms) in enumerate(zip(traj.stats, traj.reports, traj.wall_ms)):
        if stats is None:
            continue
        rows.append(
            {
                "level": level,
                "t": float(traj.times[level + 1]),
                "iterations": stats.iterations,
                "initial_stationarity": stats.initial_stationarity,
                "final_stationarity": stats.final_stationarity,
                "final_cost": stats.final_cost,
                "monotone": report.passed,
                "wall_ms": wall_ms if timings else None,
            }
        )
    return pd.DataFrame(rows, columns=STATS_COLUMNS)
