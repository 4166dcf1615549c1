"""Tests for stiffness matrices, load vectors, damping and transfers."""

import numpy as np
import pytest

from kernel_multigrid.assembly import (
    EllipticOperator,
    assemble_load,
    assemble_stiffness,
    build_prolongation,
    check_damping,
    measure_scale,
    select_damping,
    stiffness_decay,
)
from kernel_multigrid.exceptions import DimensionError, DomainError
from kernel_multigrid.geometry import (
    FLAT_TORUS,
    UNIT_SPHERE,
    PointHierarchy,
    PointSet,
    build_quadrature,
)
from kernel_multigrid.kernelspace import lagrange_values
from kernel_multigrid.multigrid import LevelStack
from kernel_multigrid.studio import l2_error

from .helpers_systems import make_system

# ---------------------------------------------------------------------------
# EllipticOperator
# ---------------------------------------------------------------------------


def test_operator_requires_ellipticity() -> None:
    """The reaction coefficient must stay above c_min > 0."""
    with pytest.raises(DomainError):
        EllipticOperator(c=0.5, c_min=1.0)
    with pytest.raises(DomainError):
        EllipticOperator(c=1.0, c_min=0.0)


def test_operator_advection_is_a_two_vector() -> None:
    """Advection vectors have exactly two components."""
    with pytest.raises(DomainError):
        EllipticOperator(advection=(1.0, 2.0, 3.0))
    op = EllipticOperator(advection=[1, 2])
    assert op.advection == (1.0, 2.0)
    assert not op.symmetric


def test_measure_scale() -> None:
    """The torus series is scaled by its area, the sphere series is not."""
    assert measure_scale(FLAT_TORUS) == pytest.approx(4 * np.pi**2)
    assert measure_scale(UNIT_SPHERE) == 1.0


# ---------------------------------------------------------------------------
# assemble_stiffness
# ---------------------------------------------------------------------------


def test_stiffness_is_symmetric_positive_definite(torus_stack: LevelStack) -> None:
    """A is symmetric positive definite with B its diagonal."""
    for system in torus_stack.systems:
        matrix = system.A
        np.testing.assert_array_equal(matrix, matrix.T)
        np.testing.assert_array_equal(system.B, np.diag(matrix))
        assert np.linalg.eigvalsh(matrix)[0] > 0.0
        assert system.symmetric


def test_sphere_stiffness_is_positive_definite(sphere_stack: LevelStack) -> None:
    """The sphere stiffness matrices are positive definite."""
    for system in sphere_stack.systems:
        assert np.linalg.eigvalsh(system.A)[0] > 0.0


def test_stiffness_with_advection_is_not_symmetric(torus_stack: LevelStack) -> None:
    """Advection adds a skew part while the symmetric part stays the same."""
    basis = torus_stack.bases[1]
    plain = torus_stack.systems[1].A
    system = assemble_stiffness(basis, EllipticOperator(advection=(1.0, 0.0)))
    assert not system.symmetric
    assert np.max(np.abs(system.A - system.A.T)) > 0.0
    np.testing.assert_allclose(
        (system.A + system.A.T) / 2.0, plain, atol=1e-10 * np.abs(plain).max()
    )


def test_advection_solve_recovers_the_exact_solution(
    fine_torus_stack: LevelStack,
) -> None:
    """A u = b approximates -Laplace u + 3 du/dx1 + u = f, not its adjoint."""
    basis = fine_torus_stack.bases[1]
    system = assemble_stiffness(basis, EllipticOperator(advection=(3.0, 0.0)))

    def exact(x: np.ndarray) -> np.ndarray:
        return np.cos(x[:, 0]) * np.cos(2.0 * x[:, 1])

    def rhs(x: np.ndarray) -> np.ndarray:
        return 6.0 * exact(x) - 3.0 * np.sin(x[:, 0]) * np.cos(2.0 * x[:, 1])

    quad = build_quadrature(FLAT_TORUS, 3)
    b = assemble_load(basis, rhs, quad)
    error = l2_error(basis, np.linalg.solve(system.A, b), exact, quad)
    adjoint_error = l2_error(basis, np.linalg.solve(system.A.T, b), exact, quad)
    assert error < 1e-2
    assert adjoint_error > 100.0 * error


def test_stiffness_entries_decay(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """Entries of A decay with the distance of the centers."""
    fit = stiffness_decay(
        torus_stack.systems[2], torus_hierarchy.levels[2], torus_hierarchy.stats[2]
    )
    assert fit.slope < 0.0


# ---------------------------------------------------------------------------
# assemble_load
# ---------------------------------------------------------------------------


def test_zero_load_vector(torus_stack: LevelStack) -> None:
    """f = 0 gives b = 0 exactly."""
    quad = build_quadrature(FLAT_TORUS, 2)
    b = assemble_load(torus_stack.bases[1], lambda x: np.zeros(len(x)), quad)
    np.testing.assert_array_equal(b, np.zeros(64))


def test_load_vector_of_a_constant(torus_stack: LevelStack) -> None:
    """Lagrange functions of a grid integrate to the cell area."""
    quad = build_quadrature(FLAT_TORUS, 3)
    basis = torus_stack.bases[1]
    b = assemble_load(basis, np.ones(len(quad.nodes)), quad)
    np.testing.assert_allclose(b, 4 * np.pi**2 / len(basis), rtol=1e-3)


def test_load_values_must_match_the_nodes(torus_stack: LevelStack) -> None:
    """Sampled right-hand sides need one value per quadrature node."""
    quad = build_quadrature(FLAT_TORUS, 1)
    with pytest.raises(DimensionError):
        assemble_load(torus_stack.bases[0], np.ones(3), quad)


# ---------------------------------------------------------------------------
# select_damping
# ---------------------------------------------------------------------------


def test_damping_of_a_diagonal_matrix() -> None:
    """B^-1/2 A B^-1/2 = id gives theta = 0.9."""
    choice = select_damping(make_system(2.0 * np.eye(4), theta=1.0))
    assert choice.lambda_max == pytest.approx(1.0)
    assert choice.converged
    assert choice.theta == pytest.approx(0.9)


def test_damping_satisfies_the_energy_bound(torus_stack: LevelStack) -> None:
    """theta <Av, v> <= <Bv, v> on every level."""
    for system in torus_stack.systems:
        assert 0.0 < system.theta < 1.0
        assert check_damping(system)


def test_unsettled_power_iteration_uses_the_fallback_factor(caplog) -> None:
    """A single step cannot settle, so 0.8 over the row sum bound applies."""
    matrix = np.array([[2.0, 1.0], [1.0, 2.0]])
    system = make_system(matrix, theta=0.5)
    choice = select_damping(system, steps=1)
    assert not choice.converged
    assert choice.lambda_max == pytest.approx(1.5)
    assert choice.theta == pytest.approx(0.8 / 1.5)
    assert check_damping(system.with_damping(choice))
    assert "did not settle" in caplog.text


def test_unsettled_damping_respects_the_energy_bound() -> None:
    """An underestimated lambda_max never yields theta <Av, v> > <Bv, v>."""
    matrix = np.diag(np.arange(1.0, 9.0)) + 0.4 * np.ones((8, 8))
    system = make_system(matrix, theta=0.5)
    for steps in (1, 2, 3):
        choice = select_damping(system, steps=steps, seed=steps)
        assert 0.0 < choice.theta < 1.0
        assert check_damping(system.with_damping(choice), samples=200)


def test_check_damping_needs_theta() -> None:
    """Damping cannot be checked before it is selected."""
    system = make_system(np.eye(2), theta=0.5)
    undamped = system.with_matrix(np.eye(2))
    with pytest.raises(DomainError):
        check_damping(undamped)


def test_non_positive_diagonal_is_rejected() -> None:
    """Replacing A requires a positive diagonal."""
    system = make_system(np.eye(2), theta=0.5)
    with pytest.raises(DomainError):
        system.with_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


# ---------------------------------------------------------------------------
# build_prolongation
# ---------------------------------------------------------------------------


def test_prolongation_keeps_coarse_values(torus_stack: LevelStack) -> None:
    """Coarse points are fine points, so their rows of P are the identity."""
    pair = torus_stack.transfer(1)
    np.testing.assert_array_equal(pair.P[:16], np.eye(16))
    np.testing.assert_array_equal(pair.R, pair.P.T)


def test_prolongation_is_bounded(torus_stack: LevelStack) -> None:
    """||P||_2 stays below 10 between the coarsest torus levels."""
    assert np.linalg.norm(torus_stack.transfer(1).P, 2) <= 10.0


def test_prolongation_samples_coarse_functions(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """P u is the coarse expansion sum u_xi chi_xi evaluated at the fine points."""
    coarse = torus_stack.bases[1]
    u = np.random.default_rng(2).standard_normal(len(coarse))
    expansion = lagrange_values(coarse, torus_hierarchy.levels[2]) @ u
    np.testing.assert_allclose(
        torus_stack.transfer(2).P @ u, expansion, atol=1e-8 * np.abs(u).sum()
    )


def test_prolongated_coefficients_describe_the_same_function(
    torus_stack: LevelStack,
) -> None:
    """sum_eta (P c)_eta chi_eta(x) = sum_xi c_xi chi_xi(x) for any x."""
    rng = np.random.default_rng(5)
    coarse, fine = torus_stack.bases[1], torus_stack.bases[2]
    picked = rng.choice(48 * 48, 50, replace=False)
    coords = np.column_stack(np.divmod(picked, 48)) * (2 * np.pi / 48)
    samples = PointSet(coords, FLAT_TORUS, lattice=48)
    c = rng.standard_normal(len(coarse))
    np.testing.assert_allclose(
        lagrange_values(fine, samples) @ (torus_stack.transfer(2).P @ c),
        lagrange_values(coarse, samples) @ c,
        atol=1e-8 * np.abs(c).sum(),
    )


def test_prolongation_needs_nested_points(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """Fine points must start with the coarse points."""
    with pytest.raises(DomainError):
        build_prolongation(torus_stack.bases[1], torus_hierarchy.levels[0])
