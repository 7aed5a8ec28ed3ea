"""
Tests for the cubic Hermite element: grid, evaluation, interpolation and assembly.
"""
import numpy as np

from hermite_fem import (
    assemble_forms,
    basis_matrix,
    build_grid,
    composite_gauss,
    eval_fe,
    h2_norm,
    h2_seminorm,
    infer_dim,
    interpolate,
    join_coefficients,
    l2_norm,
    locate,
    split_coefficients,
)


def _cubic(s):
    return np.array([s**3 - 2.0 * s**2 + 0.5, 0.3 * s**3 + s])


def _cubic_d(s):
    return np.array([3.0 * s**2 - 4.0 * s, 0.9 * s**2 + 1.0])


def _cubic_dd(s):
    return np.array([6.0 * s - 4.0, 1.8 * s])


def test_build_grid():
    """Spacing, node positions and argument checks."""
    print("=" * 70)
    print("Grid Construction Test")
    print("=" * 70)

    grid = build_grid(1.0, 5)
    assert grid.h == 0.25
    assert grid.num_cells == 4
    assert np.allclose(grid.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert grid.nodes[-1] == 1.0
    assert grid.coefficient_size(2) == 20

    for length, nodes in [(0.0, 5), (-1.0, 5), (1.0, 2), (1.0, 4.5)]:
        try:
            build_grid(length, nodes)
        except ValueError:
            continue
        raise AssertionError(f"build_grid({length}, {nodes}) should fail")
    print("✓ Grid spacing and validation")


def test_fixed_and_free_indices():
    """The last node's value and slope are the fixed coefficients."""
    grid = build_grid(1.0, 4)
    assert list(grid.fixed_indices(2)) == [6, 7, 14, 15]
    free = grid.free_indices(2)
    assert free.size == 12
    assert not set(free) & set(grid.fixed_indices(2))
    assert list(grid.fixed_indices(3)) == [9, 10, 11, 21, 22, 23]
    print("✓ Fixed and free index sets")


def test_split_and_join():
    grid = build_grid(2.0, 4)
    values = np.arange(8.0).reshape(4, 2)
    slopes = -np.arange(8.0).reshape(4, 2)
    coeffs = join_coefficients(values, slopes)
    assert coeffs.shape == (16,)
    v, d = split_coefficients(coeffs, grid)
    assert np.array_equal(v, values) and np.array_equal(d, slopes)
    assert infer_dim(coeffs, grid) == 2


def test_infer_dim_rejects_bad_tuples():
    grid = build_grid(1.0, 4)
    for bad in [np.zeros(7), np.zeros((4, 4)), np.array([np.nan] * 16)]:
        try:
            infer_dim(bad, grid)
        except ValueError:
            continue
        raise AssertionError(f"infer_dim should reject {bad.shape}")


def test_cubics_are_reproduced():
    """Hermite interpolation of a cubic is exact, including two derivatives."""
    print("\n" + "=" * 70)
    print("Cubic Reproduction Test")
    print("=" * 70)

    grid = build_grid(1.5, 7)
    coeffs = interpolate(_cubic, grid, df=_cubic_d)
    s = np.random.default_rng(3).uniform(0.0, 1.5, 40)
    s = np.concatenate([s, grid.nodes])

    for order, exact in [(0, _cubic), (1, _cubic_d), (2, _cubic_dd)]:
        got = eval_fe(coeffs, grid, s, order=order)
        want = np.array([exact(x) for x in s])
        err = np.max(np.abs(got - want))
        assert err <= 1e-11, f"order {order} error {err}"
        print(f"✓ Derivative order {order}: max error {err:.2e}")


def test_partition_of_unity():
    """Unit node values with zero slopes give the constant 1."""
    grid = build_grid(1.0, 6)
    coeffs = join_coefficients(np.ones((6, 1)), np.zeros((6, 1)))
    s = np.linspace(0.0, 1.0, 23)
    assert np.allclose(eval_fe(coeffs, grid, s)[:, 0], 1.0, atol=1e-14)
    assert np.allclose(eval_fe(coeffs, grid, s, order=1)[:, 0], 0.0, atol=1e-12)


def test_eval_fe_shapes():
    grid = build_grid(1.0, 4)
    coeffs = interpolate(_cubic, grid, df=_cubic_d)
    assert eval_fe(coeffs, grid, 0.3).shape == (2,)
    assert eval_fe(coeffs, grid, [0.3, 0.4]).shape == (2, 2)
    assert np.allclose(eval_fe(coeffs, grid, 1.0), _cubic(1.0))


def test_locate():
    grid = build_grid(1.0, 5)
    cells, xi = locate(grid, [0.0, 0.125, 1.0])
    assert list(cells) == [0, 0, 3]
    assert np.allclose(xi, [-1.0, 0.0, 1.0])
    for s in [-0.01, 1.01, np.nan]:
        try:
            locate(grid, s)
        except ValueError:
            continue
        raise AssertionError(f"locate should reject {s}")
    print("✓ Positions outside [0, l] are rejected")


def test_interpolate_without_derivative():
    """The finite-difference slope fallback is accurate to the step size."""
    grid = build_grid(1.0, 11)
    coeffs = interpolate(np.sin, grid)
    _, slopes = split_coefficients(coeffs, grid)
    assert np.max(np.abs(slopes[:, 0] - np.cos(grid.nodes))) < 1e-3
    try:
        interpolate(lambda s: np.inf, grid)
    except ValueError:
        pass
    else:
        raise AssertionError("non-finite samples should raise")


def _quadrature_matrix(grid, order, num_points=10):
    cells, xi, weights, _ = composite_gauss(grid, num_points)
    B = basis_matrix(grid, cells, xi, order).toarray()
    return B.T @ (weights[:, None] * B)


def test_assembly_matches_quadrature():
    """Closed-form element matrices against 10-point Gauss quadrature."""
    print("\n" + "=" * 70)
    print("Assembly vs Quadrature Test")
    print("=" * 70)

    grid = build_grid(1.0, 6)
    forms = assemble_forms(grid, dim=2)
    for name, order in [("mass", 0), ("grad_mass", 1), ("stiffness", 2)]:
        assembled = getattr(forms, name).toarray()
        oracle = _quadrature_matrix(grid, order)
        scale = np.max(np.abs(oracle))
        err = np.max(np.abs(assembled - oracle)) / scale
        assert err <= 1e-12, f"{name}: relative error {err}"
        assert np.allclose(assembled, assembled.T, rtol=0, atol=1e-14 * scale)
        print(f"✓ {name}: relative error {err:.2e}")

    assert forms.mass_n.shape == (24, 24)
    dense = forms.mass_n.toarray()
    assert np.allclose(dense[0::2, 0::2], forms.mass.toarray())
    assert np.all(dense[0::2, 1::2] == 0.0)


def test_forms_definiteness():
    """Mass is positive definite; stiffness vanishes on straight lines."""
    grid = build_grid(2.0, 8)
    forms = assemble_forms(grid, dim=1)
    assert np.min(np.linalg.eigvalsh(forms.mass.toarray())) > 0.0
    line = interpolate(lambda s: 3.0 - 0.5 * s, grid, df=lambda s: -0.5)
    assert h2_seminorm(line, forms) < 1e-5
    try:
        assemble_forms(grid, dim=4)
    except ValueError:
        pass
    else:
        raise AssertionError("dim 4 should be rejected")


def test_norms():
    """Norms of simple functions on [0, 1]."""
    grid = build_grid(1.0, 5)
    forms = assemble_forms(grid, dim=2)
    constant = interpolate(lambda s: np.array([1.0, 0.0]), grid, df=lambda s: np.zeros(2))
    assert abs(l2_norm(constant, forms) - 1.0) < 1e-13
    assert h2_seminorm(constant, forms) < 1e-10

    # |s e_1|^2 integrates to 1/3, its derivative to 1
    ramp = interpolate(lambda s: np.array([s, 0.0]), grid, df=lambda s: np.array([1.0, 0.0]))
    assert abs(h2_norm(ramp, forms) - np.sqrt(4.0 / 3.0)) < 1e-13
    print("✓ L2, H2 seminorm and H2 norm of simple functions")


if __name__ == "__main__":
    test_build_grid()
    test_fixed_and_free_indices()
    test_split_and_join()
    test_infer_dim_rejects_bad_tuples()
    test_cubics_are_reproduced()
    test_partition_of_unity()
    test_eval_fe_shapes()
    test_locate()
    test_interpolate_without_derivative()
    test_assembly_matches_quadrature()
    test_forms_definiteness()
    test_norms()
    print("\n✓ All hermite_fem tests passed")
