"""Spline basis against a naive Cox-de Boor oracle; layer math against
dense brute-force mixing and finite differences."""

import numpy as np
import pytest

from kga import diffcore as dc
from kga.diffcore import Parameter, constant, grad_check
from kga.kan import (
    KanLayer,
    KanStack,
    SplineGrid,
    _basis_and_deriv_compact,
    bspline_basis,
    kan_init,
    spline_mix,
)


def naive_cox_de_boor(knots, i, k, x):
    """Textbook recursive B-spline evaluation, the reference oracle."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    total = 0.0
    d1 = knots[i + k] - knots[i]
    if d1 > 0:
        total += (x - knots[i]) / d1 * naive_cox_de_boor(knots, i, k - 1, x)
    d2 = knots[i + k + 1] - knots[i + 1]
    if d2 > 0:
        total += (knots[i + k + 1] - x) / d2 * naive_cox_de_boor(knots, i + 1, k - 1, x)
    return total


def full_basis_oracle(grid, x):
    return np.array(
        [naive_cox_de_boor(grid.knots, i, grid.order, x) for i in range(grid.n_basis)]
    )


def test_order_zero_is_interval_indicator():
    grid = SplineGrid(lo=0.0, hi=4.0, size=4, order=0)
    vec = bspline_basis(2.5, grid)
    expected = np.zeros(4)
    expected[2] = 1.0
    assert np.array_equal(vec, expected)


def test_matches_naive_recursion_oracle():
    grid = SplineGrid(size=8, order=3)
    rng = np.random.default_rng(3)
    for x in rng.uniform(-0.999, 0.999, size=50):
        got = bspline_basis(x, grid)
        want = full_basis_oracle(grid, x)
        assert np.max(np.abs(got - want)) <= 1e-12


def test_partition_of_unity_and_range():
    grid = SplineGrid(size=32, order=3)
    rng = np.random.default_rng(5)
    xs = rng.uniform(-1.0, 1.0, size=1000)
    for x in xs:
        vec = bspline_basis(x, grid)
        assert abs(vec.sum() - 1.0) <= 1e-12
        assert np.all(vec >= 0.0) and np.all(vec <= 1.0)


def test_locality_at_most_order_plus_one_active():
    grid = SplineGrid(size=16, order=3)
    rng = np.random.default_rng(9)
    for x in rng.uniform(-1, 1, size=100):
        assert np.count_nonzero(bspline_basis(x, grid)) <= grid.order + 1


def test_cubic_values_at_interior_knot():
    grid = SplineGrid(size=32, order=3)
    vec = bspline_basis(0.0, grid)  # 0.0 is an interior knot of the uniform grid
    nonzero = np.sort(vec[vec > 1e-15])
    assert np.allclose(nonzero, [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], atol=1e-12)


def test_clamped_points_still_partition_unity():
    grid = SplineGrid(size=8, order=3)
    for x in (-5.0, -1.0, 1.0, 7.3):
        assert abs(bspline_basis(x, grid).sum() - 1.0) <= 1e-12


def test_basis_derivative_matches_finite_differences():
    grid = SplineGrid(size=8, order=3)
    rng = np.random.default_rng(11)
    xs = rng.uniform(-0.95, 0.95, size=30)
    xs = xs[np.min(np.abs(xs[:, None] - grid.knots[None, :]), axis=1) > 1e-3]
    eps = 1e-6
    vals, deriv, offs = _basis_and_deriv_compact(grid, xs)
    for t, x in enumerate(xs):
        fd = (full_basis_oracle(grid, x + eps) - full_basis_oracle(grid, x - eps)) / (2 * eps)
        full_deriv = np.zeros(grid.n_basis)
        full_deriv[offs[t] : offs[t] + grid.order + 1] = deriv[t]
        assert np.max(np.abs(full_deriv - fd)) <= 1e-6


def test_derivative_is_zero_outside_clamped_domain():
    grid = SplineGrid(size=8, order=3)
    _, deriv, _ = _basis_and_deriv_compact(grid, np.array([-2.0, 3.5]))
    assert np.all(deriv == 0.0)


def fit_identity_coeffs(grid, n_points=400):
    """Least-squares spline fit of f(x) = x over the grid domain (oracle)."""
    xs = np.linspace(grid.lo, grid.hi, n_points)
    A = np.stack([full_basis_oracle(grid, x) for x in xs])
    c, *_ = np.linalg.lstsq(A, xs, rcond=None)
    return c


def test_identity_fit_reproduces_input():
    grid = SplineGrid(size=16, order=3)
    c = fit_identity_coeffs(grid)
    layer = KanLayer(
        Parameter(c.reshape(1, -1), "c"),
        Parameter(np.zeros((1, 1)), "w"),
        grid,
    )
    xs = np.linspace(-1.0, 1.0, 33).reshape(-1, 1)
    out = layer.forward(constant(xs))
    assert np.max(np.abs(out.data - xs)) <= 1e-3


def test_zero_spline_coefficients_leave_base_path():
    grid = SplineGrid(size=8, order=3)
    rng = np.random.default_rng(13)
    w = rng.uniform(-1, 1, size=(7, 3))
    layer = KanLayer(
        Parameter(np.zeros((7, 3 * grid.n_basis)), "c"),
        Parameter(w, "w"),
        grid,
    )
    h = rng.uniform(-2, 2, size=(5, 3))
    out = layer.forward(constant(h))
    silu = h / (1.0 + np.exp(-h))
    assert out.shape == (5, 7)
    assert np.max(np.abs(out.data - silu @ w.T)) <= 1e-14


def test_identity_base_weights_give_elementwise_silu():
    grid = SplineGrid(size=8, order=3)
    layer = KanLayer(
        Parameter(np.zeros((4, 4 * grid.n_basis)), "c"),
        Parameter(np.eye(4), "w"),
        grid,
    )
    h = np.random.default_rng(15).uniform(-2, 2, size=(6, 4))
    out = layer.forward(constant(h))
    assert np.allclose(out.data, h / (1.0 + np.exp(-h)), atol=1e-14)


def test_spline_mix_matches_dense_oracle_with_exact_zeros():
    grid = SplineGrid(size=6, order=3)
    rng = np.random.default_rng(17)
    h = rng.uniform(-1.5, 1.5, size=(6, 4))
    h[rng.uniform(size=h.shape) < 0.4] = 0.0  # exercise the shared-zero path
    c = rng.normal(size=(3, 4 * grid.n_basis))
    out = spline_mix(constant(h), constant(c), grid)

    c3 = c.reshape(3, 4, grid.n_basis)
    want = np.zeros((6, 3))
    for r in range(6):
        for i in range(4):
            # The layer clamps inputs to the grid domain before evaluation.
            basis = full_basis_oracle(grid, float(np.clip(h[r, i], grid.lo, grid.hi)))
            want[r] += c3[:, i, :] @ basis
    assert np.max(np.abs(out.data - want)) <= 1e-10


def test_spline_mix_gradients():
    grid = SplineGrid(size=5, order=3)
    rng = np.random.default_rng(19)
    h0 = rng.uniform(-0.9, 0.9, size=(4, 3))
    h0[0, 1] = 0.0
    h0[2, 2] = 0.0
    h = Parameter(h0, "h")
    c = Parameter(rng.normal(size=(2, 3 * grid.n_basis)), "c")
    report = grad_check(lambda: dc.mean(spline_mix(h, c, grid)), [h, c])
    assert report.passed, report


def test_kan_layer_full_gradient():
    grid = SplineGrid(size=5, order=3)
    layer = kan_init(3, 2, grid, seed=0)
    h = Parameter(np.random.default_rng(21).uniform(-0.9, 0.9, size=(4, 3)), "h")

    def fn():
        out = layer.forward(h)
        return dc.mean(dc.hadamard(out, out))

    report = grad_check(fn, layer.parameters() + [h], eps=1e-5, tol=1e-4)
    assert report.passed, report


def test_kan_init_deterministic_and_seed_sensitive():
    grid = SplineGrid()
    a = kan_init(5, 4, grid, seed=42)
    b = kan_init(5, 4, grid, seed=42)
    c = kan_init(5, 4, grid, seed=43)
    assert np.array_equal(a.coeffs.data, b.coeffs.data)
    assert np.array_equal(a.base_w.data, b.base_w.data)
    assert not np.array_equal(a.coeffs.data, c.coeffs.data)


def test_kan_init_coefficient_scale():
    grid = SplineGrid(size=32, order=3)
    layer = kan_init(20, 20, grid, seed=7)  # 20*20*35 = 14000 draws
    expected = 0.1 * np.sqrt(2.0 / np.pi) / np.sqrt(32)
    observed = np.abs(layer.coeffs.data).mean()
    assert abs(observed - expected) / expected <= 0.2


def test_kan_stack_checks_dimension_chain():
    grid = SplineGrid(size=4, order=2)
    l1 = kan_init(3, 5, grid, seed=0, name="l1")
    l2 = kan_init(4, 2, grid, seed=1, name="l2")
    with pytest.raises(dc.ShapeError):
        KanStack([l1, l2])
    stack = KanStack([kan_init(3, 4, grid, seed=2), kan_init(4, 2, grid, seed=3)])
    out = stack.forward(constant(np.random.default_rng(23).uniform(-1, 1, (6, 3))))
    assert out.shape == (6, 2)
