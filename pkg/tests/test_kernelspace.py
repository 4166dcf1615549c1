"""Tests for kernels, Lagrange bases and decay measurements."""

from pathlib import Path

import numpy as np
import pytest

from kernel_multigrid.assembly import EllipticOperator
from kernel_multigrid.exceptions import (
    DomainError,
    InsufficientDataError,
    UnsupportedOperatorError,
)
from kernel_multigrid.geometry import (
    FLAT_TORUS,
    UNIT_SPHERE,
    PointHierarchy,
    PointSet,
    build_quadrature,
)
from kernel_multigrid.kernelspace import (
    SpectralKernel,
    compute_lagrange,
    decay_profile,
    energy_gram_eval,
    energy_gram_matrix,
    envelope_fit,
    eval_lagrange,
    kernel_eval,
    kernel_matrix,
    lagrange_values,
    load_basis_cache,
    riesz_ratios,
    save_basis_cache,
)
from kernel_multigrid.multigrid import LevelStack


def _random_torus_points(count: int, seed: int = 0) -> np.ndarray:
    """Return random angle pairs in [0, 2 pi)."""
    return np.random.default_rng(seed).uniform(0.0, 2 * np.pi, (count, 2))


# ---------------------------------------------------------------------------
# SpectralKernel
# ---------------------------------------------------------------------------


def test_smoothness_order_must_exceed_half_the_dimension() -> None:
    """Orders below 3 are rejected."""
    with pytest.raises(DomainError):
        SpectralKernel.create(FLAT_TORUS, 2)


def test_series_tail_is_below_tolerance() -> None:
    """The truncated series drops less than the requested tail."""
    kernel = SpectralKernel.create(UNIT_SPHERE, 3, tolerance=1e-10)
    assert kernel.tail < 1e-10
    assert kernel.series_cutoff >= 64


def test_cutoff_resolves_the_fill_distance() -> None:
    """Finer point sets need more series terms."""
    coarse = SpectralKernel.create(FLAT_TORUS, 3, 0.5, tolerance=1e-4)
    fine = SpectralKernel.create(FLAT_TORUS, 3, 0.05, tolerance=1e-4)
    assert fine.series_cutoff >= 160 > coarse.series_cutoff


def test_kernel_is_symmetric() -> None:
    """phi(x, y) = phi(y, x)."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    x, y = _random_torus_points(2)
    assert kernel_eval(kernel, x, y) == pytest.approx(kernel_eval(kernel, y, x))


def test_kernel_matrix_is_positive_definite() -> None:
    """Collocation matrices on distinct points are positive definite."""
    kernel = SpectralKernel.create(UNIT_SPHERE, 3)
    coords = np.random.default_rng(1).standard_normal((30, 3))
    coords /= np.linalg.norm(coords, axis=1)[:, None]
    points = PointSet(coords, UNIT_SPHERE)
    matrix = kernel_matrix(kernel, points, points)
    np.testing.assert_array_equal(matrix, matrix.T)
    assert np.linalg.eigvalsh(matrix)[0] > 0.0


def test_lattice_and_direct_evaluation_agree(torus_hierarchy: PointHierarchy) -> None:
    """Grid points give the same kernel values with and without lattice tables."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    grid = torus_hierarchy.levels[1]
    scattered = PointSet(grid.coords, FLAT_TORUS)
    np.testing.assert_allclose(
        kernel_matrix(kernel, grid, grid),
        kernel_matrix(kernel, scattered, scattered),
        rtol=1e-10,
        atol=1e-12,
    )


def test_kernel_rejects_points_of_another_manifold() -> None:
    """Kernel and points must share a manifold."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    sphere_point = PointSet(np.array([[0.0, 0.0, 1.0]]), UNIT_SPHERE)
    with pytest.raises(DomainError):
        kernel_matrix(kernel, sphere_point, [0.0, 0.0])


# ---------------------------------------------------------------------------
# energy_gram_eval
# ---------------------------------------------------------------------------


def test_energy_gram_is_symmetric_without_advection() -> None:
    """a(phi(., x), phi(., y)) is symmetric for -Laplace + c."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    op = EllipticOperator(c=2.0, c_min=1.0)
    x, y = _random_torus_points(2, seed=5)
    assert energy_gram_eval(kernel, op, x, y) == pytest.approx(
        energy_gram_eval(kernel, op, y, x)
    )


def test_energy_gram_grows_with_the_reaction_term() -> None:
    """The diagonal of the Gram matrix increases with c."""
    kernel = SpectralKernel.create(UNIT_SPHERE, 3)
    x = np.array([0.0, 0.0, 1.0])
    small = energy_gram_eval(kernel, EllipticOperator(c=1.0), x, x)
    large = energy_gram_eval(kernel, EllipticOperator(c=5.0), x, x)
    assert 0.0 < small < large


def test_advection_adds_a_skew_part(torus_hierarchy: PointHierarchy) -> None:
    """The advection term is antisymmetric in the two points."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    points = torus_hierarchy.levels[1]
    plain = energy_gram_matrix(kernel, EllipticOperator(), points, points)
    advected = energy_gram_matrix(
        kernel, EllipticOperator(advection=(1.0, 0.5)), points, points
    )
    skew = advected - plain
    np.testing.assert_allclose(skew, -skew.T, atol=1e-12)
    assert np.max(np.abs(skew)) > 0.0


def test_variable_coefficients_are_unsupported() -> None:
    """Callable reaction coefficients cannot be evaluated spectrally."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    op = EllipticOperator(c=lambda x: 1.0 + x[:, 0] ** 2)
    with pytest.raises(UnsupportedOperatorError):
        energy_gram_eval(kernel, op, [0.0, 0.0], [1.0, 1.0])


def test_sphere_advection_is_unsupported() -> None:
    """Constant advection only exists on the torus."""
    kernel = SpectralKernel.create(UNIT_SPHERE, 3)
    op = EllipticOperator(advection=(1.0, 0.0))
    with pytest.raises(UnsupportedOperatorError):
        energy_gram_eval(kernel, op, [0.0, 0.0, 1.0], [0.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# compute_lagrange
# ---------------------------------------------------------------------------


def test_lagrange_basis_is_cardinal(torus_stack: LevelStack) -> None:
    """chi_xi(zeta) = delta_xi,zeta on every level."""
    for basis in torus_stack.bases:
        values = lagrange_values(basis, basis.points)
        np.testing.assert_allclose(values, np.eye(len(basis)), atol=1e-8)
        assert basis.cardinality_error <= 1e-8


def test_sphere_lagrange_basis_is_cardinal(sphere_stack: LevelStack) -> None:
    """Cardinality also holds for the icosahedral point sets."""
    basis = sphere_stack.bases[-1]
    assert eval_lagrange(basis, 5, basis.points.coords[5]) == pytest.approx(
        1.0, abs=1e-8
    )
    assert eval_lagrange(basis, 5, basis.points.coords[6]) == pytest.approx(
        0.0, abs=1e-8
    )


def test_eval_lagrange_checks_the_index(torus_stack: LevelStack) -> None:
    """Basis indices must exist."""
    basis = torus_stack.bases[0]
    with pytest.raises(DomainError):
        eval_lagrange(basis, len(basis), [0.0, 0.0])


def test_lagrange_rejects_duplicate_points() -> None:
    """Duplicate centers make the collocation matrix singular."""
    kernel = SpectralKernel.create(FLAT_TORUS, 3)
    points = PointSet(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]), FLAT_TORUS)
    with pytest.raises(DomainError):
        compute_lagrange(kernel, points)


def test_basis_cache_is_reused(tmp_path: Path, torus_stack: LevelStack) -> None:
    """Cached coefficients load only for the kernel that produced them."""
    basis = torus_stack.bases[1]
    path = tmp_path / "level1.lagb"
    save_basis_cache(path, basis)

    loaded = load_basis_cache(path, basis.kernel, len(basis))
    np.testing.assert_array_equal(loaded, basis.coefficients)
    rebuilt = compute_lagrange(basis.kernel, basis.points, 1, coefficients=loaded)
    assert rebuilt.cardinality_error == pytest.approx(basis.cardinality_error)

    other = SpectralKernel(FLAT_TORUS, 4, basis.kernel.series_cutoff)
    assert load_basis_cache(path, other, len(basis)) is None
    assert load_basis_cache(tmp_path / "missing.lagb", basis.kernel, 4) is None


# ---------------------------------------------------------------------------
# decay and stability
# ---------------------------------------------------------------------------


def test_envelope_fit_recovers_an_exponential() -> None:
    """The fitted slope of exp(-2 t) is -2."""
    distance = np.linspace(0.0, 10.0, 400)
    fit = envelope_fit(distance, np.exp(-2.0 * distance))
    assert fit.slope == pytest.approx(-2.0, rel=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.samples == 400


def test_envelope_fit_needs_samples() -> None:
    """Fewer than eight usable samples cannot be fitted."""
    with pytest.raises(InsufficientDataError):
        envelope_fit(np.arange(5.0), np.full(5, 0.5))


def test_lagrange_functions_decay(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """|chi_xi(x)| decays exponentially in dist(x, xi)/h."""
    fit = decay_profile(torus_stack.bases[2], 0, torus_hierarchy.stats[2])
    assert fit.slope < 0.0


def test_riesz_ratios_are_bounded(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """L2 norms of basis expansions are comparable to q^(d/2) ||a||."""
    quad = build_quadrature(FLAT_TORUS, 3)
    ratios = riesz_ratios(torus_stack.bases[1], quad, torus_hierarchy.stats[1].q)
    assert ratios.shape == (20,)
    assert np.all(ratios > 0.0)
    assert ratios.max() / ratios.min() < 4.0
