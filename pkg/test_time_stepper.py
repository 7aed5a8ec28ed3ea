"""
Tests for the time stepping loop, the trajectory checks and the interpolant.
"""
import json
import os
import tempfile

import numpy as np

from constraints import ConstraintDensity, build_constraints, residual
from debug_writer import DebugWriter
from fiber_model import ForceField, ModelParams, initial_state
from hermite_fem import build_grid, interpolate
from optimizer import OptimizerConfig
from time_stepper import (
    LevelSolveError,
    Scenario,
    check_elongation_bound,
    elongation,
    interpolant_at,
    monotonicity_check,
    num_steps,
    run,
)

SHORT = ModelParams(end_time=1e-3)
LOOSE = OptimizerConfig(tol_r=0.1, max_iter=50000)


def _case_a(**kwargs):
    options = dict(
        force=ForceField.case_a(),
        params=SHORT,
        tau=2.5e-4,
        num_nodes=11,
        config=LOOSE,
    )
    options.update(kwargs)
    return Scenario(**options)


def test_num_steps():
    assert num_steps(1e-3, 2.5e-4) == 4
    assert num_steps(1e-3, 1e-3 / 8) == 8
    for end_time, tau in [(1e-3, 3e-4), (1e-3, 2e-3)]:
        try:
            num_steps(end_time, tau)
        except ValueError:
            continue
        raise AssertionError(f"num_steps({end_time}, {tau}) should fail")


def test_scenario_validation():
    for kwargs in [dict(tau=0.0), dict(force=ForceField.case_a(dim=3))]:
        try:
            _case_a(**kwargs)
        except ValueError:
            continue
        raise AssertionError(f"Scenario({kwargs}) should fail")


def test_elongation():
    grid = build_grid(1.0, 6)
    r0 = initial_state(grid, ModelParams())
    assert abs(elongation(r0, grid)) < 1e-14
    doubled = interpolate(lambda s: np.array([2.0 * s, 0.0]), grid, df=lambda s: np.array([2.0, 0.0]))
    assert abs(elongation(doubled, grid) - 1.0) < 1e-13


def test_zero_force_is_stationary():
    print("=" * 70)
    print("Zero Force Trajectory Test")
    print("=" * 70)

    traj = run(_case_a(force=ForceField.zero(), num_nodes=8))
    r0 = traj.states[0]
    assert traj.num_steps == 4 and len(traj.states) == 5
    assert all(np.array_equal(state, r0) for state in traj.states)
    assert all(abs(dl) <= 1e-12 for dl in traj.elongations)
    assert traj.total_iterations == 0
    assert check_elongation_bound(traj).satisfied
    print("✓ Straight fiber stays at rest")


def test_case_a_structural_checks():
    """Feasibility, tangent monotonicity and cost descent over a short Case A run."""
    print("\n" + "=" * 70)
    print("Case A Short Run Test")
    print("=" * 70)

    scenario = _case_a(density=ConstraintDensity.HALF, multiplier_tests=(lambda s: 1.0 - s,))
    traj = run(scenario)

    assert traj.num_steps == 4
    assert traj.solved_levels == 4
    assert traj.times[0] == 0.0 and traj.end_time == 1e-3
    assert len(traj.elongations) == len(traj.states) == 5
    assert len(traj.multipliers) == 5 and all(len(m) == 1 for m in traj.multipliers)
    assert traj.metadata["force"]["kind"] == "caseA"
    assert traj.metadata["literalStart"] is False

    for level, stats in enumerate(traj.stats):
        assert all(change < 0.0 for change in stats.cost_decreases)
        cs = build_constraints(traj.states[level], traj.grid, scenario.density)
        scale = 1.0 + np.max(np.abs(cs.rhs))
        assert np.max(np.abs(residual(traj.states[level + 1], cs))) <= 1e-10 * scale
        assert traj.reports[level].passed

    # The sign of dl is only checked on full-size grids; between constraint points of a
    # coarse grid |d_s r| can dip below 1 when the tangent turns inside a cell.
    assert all(np.isfinite(dl) and abs(dl) <= 1e-2 for dl in traj.elongations)
    moved = np.max(np.abs(traj.states[-1] - traj.states[0]))
    print(f"✓ {traj.total_iterations} iterations, tip moved {moved:.3e}, dl = {traj.elongations[-1]:.3e}")


def test_literal_start():
    traj = run(_case_a(literal_start=True))
    assert traj.stats[0] is None and traj.reports[0] is None
    assert np.array_equal(traj.states[1], traj.states[0])
    assert traj.solved_levels == 3
    assert traj.metadata["literalStart"] is True


def test_monotonicity_check():
    grid = build_grid(1.0, 6)
    r0 = initial_state(grid, ModelParams())
    cs = build_constraints(r0, grid, ConstraintDensity.NODAL)
    report = monotonicity_check(r0, r0, cs, upper_bound=1.0)
    assert report.passed and report.within_upper_bound
    assert np.isclose(report.max_tangent_norm, 1.0, rtol=0, atol=1e-12)

    shrunk = 0.5 * r0
    report = monotonicity_check(r0, shrunk, cs)
    assert not report.passed
    assert report.within_upper_bound is None


def test_interpolant():
    traj = run(_case_a(force=ForceField.case_b(), num_nodes=7))
    assert np.array_equal(interpolant_at(traj, 0.0), traj.states[0])
    assert np.array_equal(interpolant_at(traj, traj.times[2]), traj.states[2])
    assert np.array_equal(interpolant_at(traj, traj.end_time), traj.states[-1])

    mid = 0.5 * (traj.times[1] + traj.times[2])
    assert np.allclose(interpolant_at(traj, mid), 0.5 * (traj.states[1] + traj.states[2]), atol=1e-14)

    for t in [-1e-4, 2e-3]:
        try:
            interpolant_at(traj, t)
        except ValueError:
            continue
        raise AssertionError(f"interpolant_at({t}) should fail")


def test_elongation_bound_series():
    traj = run(_case_a(force=ForceField.zero(), num_nodes=6))
    traj.elongations[2] = 1.0
    series = check_elongation_bound(traj)
    assert len(series.rows) == 5
    assert series.rows[1].bound == traj.times[1] * traj.tau * traj.params.length
    assert not series.satisfied
    assert series.first_violation == traj.times[2]


def test_run_writes_solve_log():
    with tempfile.TemporaryDirectory() as tmp:
        writer = DebugWriter(enabled=True, log_dir=tmp)
        run(_case_a(num_nodes=7), writer=writer)
        writer.close()
        with open(writer.path) as f:
            entries = [json.loads(line) for line in f]
        assert os.path.dirname(writer.path) == tmp

    kinds = [entry["type"] for entry in entries]
    assert kinds[0] == "run_start" and kinds[-1] == "run_end"
    levels = [entry["data"] for entry in entries if entry["type"] == "level"]
    assert [snapshot["level"] for snapshot in levels] == [0, 1, 2, 3]
    assert all(snapshot["feasibility"] < 1e-9 for snapshot in levels)
    print("✓ One level snapshot per solved level")


def test_level_failure_carries_partial_trajectory():
    config = OptimizerConfig(tol_a=1e-14, tol_r=1e-14, max_iter=1)
    try:
        run(_case_a(num_nodes=7, config=config))
    except LevelSolveError as e:
        assert e.level == 0
        assert len(e.partial.states) == 1
        print(f"✓ {e}")
    else:
        raise AssertionError("an unreachable tolerance should fail the first level")


if __name__ == "__main__":
    test_num_steps()
    test_scenario_validation()
    test_elongation()
    test_zero_force_is_stationary()
    test_case_a_structural_checks()
    test_literal_start()
    test_monotonicity_check()
    test_interpolant()
    test_elongation_bound_series()
    test_run_writes_solve_log()
    test_level_failure_carries_partial_trajectory()
    print("\n✓ All time_stepper tests passed")
