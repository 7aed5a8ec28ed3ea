"""
SVG snapshots of a fiber trajectory.

The fiber hangs along -e1, so snapshots are drawn with the e2 component on the
horizontal axis and e1 on the vertical axis, one polyline per requested time.
"""
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from hermite_fem import split_coefficients
from time_stepper import interpolant_at

# Deterministic SVG ids
plt.rcParams["svg.hashsalt"] = "fiber"
plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["font.size"] = 9
plt.rcParams["figure.figsize"] = (4.0, 5.0)


def default_times(traj, count=5):
    """count equally spaced times from 0 to T."""
    return list(np.linspace(0.0, traj.end_time, count))


def parse_times(text):
    """
    Parse a comma-separated list of times.

    Raises:
        ValueError: If an entry is not a number or the list is empty.
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("No snapshot times given")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"Snapshot times must be numbers, got {text!r}")


def snapshot_curves(traj, times):
    """
    Node positions of the time-interpolated fiber at each requested time.

    Returns:
        list: One (M, n) array per time.

    Raises:
        ValueError: If a time lies outside [0, T].
    """
    curves = []
    for t in times:
        values, _ = split_coefficients(interpolant_at(traj, t), traj.grid)
        curves.append(np.array(values))
    return curves


def render_trajectory(traj, times, path):
    """
    Draw the fiber at the given times and save the figure as SVG.

    Args:
        traj (Trajectory): The trajectory to draw.
        times (list): Snapshot times in [0, T].
        path (str): Output file.

    Returns:
        int: Number of snapshots drawn.
    """
    curves = snapshot_curves(traj, times)
    fig, ax = plt.subplots()
    try:
        colors = plt.cm.viridis(np.linspace(0.0, 0.9, max(len(curves), 1)))
        for i, (t, curve) in enumerate(zip(times, curves)):
            (line,) = ax.plot(curve[:, 1], curve[:, 0], color=colors[i], lw=1.2, label=f"t = {t:.4g}")
            line.set_gid(f"snapshot-{i}")
        ax.set_xlabel("$e_2$")
        ax.set_ylabel("$e_1$")
        ax.set_aspect("equal", adjustable="datalim")
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
        ax.legend(loc="lower left", frameon=False)
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    finally:
        plt.close(fig)
    return len(curves)
