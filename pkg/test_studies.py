"""
Tests for the time-step studies.

The fast tests use coarse grids and short tau lists. The full-size reproductions of
the reference experiments run only with FIBER_SLOW_TESTS=1 and take several minutes.
"""
import os

import numpy as np

from constraints import ConstraintDensity, build_constraints, residual
from fiber_model import ForceField, ModelParams
from optimizer import OptimizerConfig
from studies import (
    REPORT_COLUMNS,
    case_force,
    compare_projections,
    estimate_order,
    run_bound_scenario,
    run_convergence_study,
    run_elongation_study,
)
from time_stepper import Scenario, run

LOOSE = OptimizerConfig(tol_r=0.1, max_iter=50000)
SHORT_TAUS = [2.5e-4, 1.25e-4, 6.25e-5]


def _slow_enabled(name):
    if os.getenv("FIBER_SLOW_TESTS") == "1":
        return True
    print(f"- {name} skipped (set FIBER_SLOW_TESTS=1)")
    return False


def test_estimate_order():
    taus = [1.0, 0.5, 0.25, 0.125]
    assert np.isclose(estimate_order(taus, [t**2 for t in taus]), 2.0)
    assert np.isclose(estimate_order(taus, [3.0 * t for t in taus[:3]] + [0.0]), 1.0)
    assert np.isclose(estimate_order(taus, [float("nan"), 0.5, 0.25, 0.125]), 1.0)
    try:
        estimate_order(taus, [1.0, 0.0, -1.0, float("nan")])
    except ValueError:
        pass
    else:
        raise AssertionError("a single usable point should raise")


def test_case_force():
    assert case_force("A", ModelParams()).kind == "caseA"
    assert case_force("caseB", ModelParams()).kind == "caseB"
    try:
        case_force("C", ModelParams())
    except ValueError:
        pass
    else:
        raise AssertionError("unknown case should raise")


def test_convergence_study_small():
    print("=" * 70)
    print("Small Convergence Study Test")
    print("=" * 70)

    report = run_convergence_study(
        "B", ConstraintDensity.NODAL, 7, config=LOOSE, taus=SHORT_TAUS, reference_index=2, threads=1
    )
    assert report.case == "caseB"
    assert report.taus == SHORT_TAUS
    assert all(row.error is None for row in report.rows)
    assert report.rows[2].error_l2 == 0.0 and report.rows[2].error_max == 0.0
    assert report.rows[0].error_l2 > 0.0
    assert report.rows[0].iters_total > 0
    assert np.isfinite(report.order())

    frame = report.to_frame()
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame["wall_ms"].isna().all()
    assert report.to_frame(timings=True)["wall_ms"].notna().all()

    threaded = run_convergence_study(
        "B", ConstraintDensity.NODAL, 7, config=LOOSE, taus=SHORT_TAUS, reference_index=2, threads=3
    )
    assert threaded.to_frame().to_csv() == frame.to_csv()
    print("✓ Rows are identical with one and three worker threads")


def test_convergence_study_rejects_bad_reference():
    try:
        run_convergence_study("A", ConstraintDensity.NODAL, 5, taus=SHORT_TAUS, reference_index=3)
    except ValueError:
        pass
    else:
        raise AssertionError("reference index outside the tau list should raise")


def test_failed_rows_are_recorded():
    """A tau that does not divide t* becomes an error row instead of aborting the study."""
    report = run_convergence_study(
        "A", ConstraintDensity.NODAL, 5, config=LOOSE, taus=[2.5e-4, 3e-4], reference_index=0, threads=1
    )
    assert report.rows[0].error is None
    assert report.rows[1].error is not None
    assert np.isnan(report.rows[1].error_l2)


def test_elongation_study_small():
    densities = [ConstraintDensity.NODAL, ConstraintDensity.HALF]
    report = run_elongation_study("A", densities, 7, config=LOOSE, taus=SHORT_TAUS[:2], threads=2)
    frame = report.to_frame()
    assert list(frame.columns) == ["tau", "dl_nodal", "dl_half"]
    assert len(frame) == 2
    for density in densities:
        assert all(error is None for error in report.errors[density])
        # Coarse grids allow small negative dl; the sign is checked at M = 300
        assert all(np.isfinite(dl) and abs(dl) <= 1e-2 for dl in report.elongations[density])
    print("✓ Elongation table with one column per density")


def test_bound_scenario_small():
    report = run_bound_scenario(7, config=LOOSE, tau=2.5e-4, horizon=1e-3, threads=1)
    frame = report.to_frame()
    assert list(frame.columns) == [
        "t", "bound", "dl_nodal", "satisfied_nodal", "dl_half", "satisfied_half",
        "dl_third", "satisfied_third",
    ]
    assert len(frame) == 5
    assert frame["t"].iloc[0] == 0.0 and frame["bound"].iloc[0] == 0.0
    assert all(error is None for error in report.errors.values())
    for density, traj in report.trajectories.items():
        assert traj.metadata["force"]["kind"] == "combined"
        assert report.series[density].rows[0].satisfied
    print("✓ Combined-force runs for all three densities")


def test_compare_projections():
    """The diagonal and seminorm projections reach the same constrained minimum."""
    tight = OptimizerConfig(tol_a=1e-12, tol_r=1e-9, max_iter=200000)
    comparison = compare_projections("A", 5, 1e-3, config=tight, params=ModelParams(bend=1e-2))
    assert comparison.projections == ("diagonal", "seminorm")
    assert all(comparison.converged.values())
    for projection in comparison.projections:
        assert comparison.gap(projection) < 1e-6, f"{projection}: {comparison.gap(projection):.2e}"
    assert comparison.relative_deviation < 1e-6
    print(
        f"✓ diagonal {comparison.iterations['diagonal']} / seminorm "
        f"{comparison.iterations['seminorm']} iterations, deviation {comparison.relative_deviation:.2e}, "
        f"J* = {comparison.cost_exact:.8e}"
    )


def test_compare_projections_flags_iteration_limit():
    comparison = compare_projections(
        "A", 7, 1e-3, config=OptimizerConfig(tol_a=1e-14, tol_r=1e-14, max_iter=2),
        projections=("euclidean", "seminorm"),
    )
    assert not any(comparison.converged.values())
    assert comparison.iterations == {"euclidean": 2, "seminorm": 2}
    assert all(np.isfinite(cost) for cost in comparison.costs.values())
    assert all(cost >= comparison.cost_exact - 1e-12 for cost in comparison.costs.values())


def test_convergence_order_full_size():
    """First-order convergence in tau for both cases at M = 300."""
    if not _slow_enabled("full-size convergence"):
        return
    for case in ("A", "B"):
        report = run_convergence_study(case, ConstraintDensity.NODAL, 300)
        errors = report.errors
        for i in range(6):
            ratio = errors[i] / errors[i + 1]
            assert 1.5 <= ratio <= 3.0, f"case {case}, ratio {i}: {ratio}"
        order = report.order()
        assert 0.8 <= order <= 1.2, f"case {case}: order {order}"
        print(f"✓ Case {case}: observed order {order:.2f}")


def test_elongation_decay_full_size():
    """Half-density elongation halves with tau and stays below the nodal one."""
    if not _slow_enabled("full-size elongation"):
        return
    densities = [ConstraintDensity.NODAL, ConstraintDensity.HALF]
    for case in ("A", "B"):
        report = run_elongation_study(case, densities, 300)
        half = report.elongations[ConstraintDensity.HALF]
        nodal = report.elongations[ConstraintDensity.NODAL]
        assert min(half) >= -1e-12, f"case {case}: dl {min(half)}"
        for i in range(7):
            assert 1.5 <= half[i] / half[i + 1] <= 3.0, f"case {case}, ratio {i}"
        assert half[7] <= 2e-4
        assert all(n > h for n, h in zip(nodal, half))
        print(f"✓ Case {case}: order {report.order(ConstraintDensity.HALF):.2f}")


def test_bound_full_size():
    """Third density respects t tau l over the long horizon; nodal density does not."""
    if not _slow_enabled("full-size bound scenario"):
        return
    report = run_bound_scenario(
        300, densities=[ConstraintDensity.NODAL, ConstraintDensity.THIRD]
    )
    assert report.series[ConstraintDensity.THIRD].satisfied
    assert not report.series[ConstraintDensity.NODAL].satisfied


def test_case_a_structural_full_size():
    """Ten Case A levels at M = 300: descent, feasibility, monotone tangents."""
    if not _slow_enabled("full-size Case A levels"):
        return
    scenario = Scenario(force=ForceField.case_a(), params=ModelParams(end_time=1e-3), tau=1e-4)
    traj = run(scenario)
    for level, stats in enumerate(traj.stats):
        assert all(change < 0.0 for change in stats.cost_decreases)
        cs = build_constraints(traj.states[level], traj.grid, scenario.density)
        assert np.max(np.abs(residual(traj.states[level + 1], cs))) <= 1e-10 * (1.0 + np.max(cs.rhs))
        assert traj.reports[level].passed
    assert min(traj.elongations) >= -1e-12


if __name__ == "__main__":
    test_estimate_order()
    test_case_force()
    test_convergence_study_small()
    test_convergence_study_rejects_bad_reference()
    test_failed_rows_are_recorded()
    test_elongation_study_small()
    test_bound_scenario_small()
    test_compare_projections()
    test_compare_projections_flags_iteration_limit()
    test_convergence_order_full_size()
    test_elongation_decay_full_size()
    test_bound_full_size()
    test_case_a_structural_full_size()
    print("\n✓ All studies tests passed")
