"""Tests for distance based truncation."""

import math

import numpy as np
import pytest
from scipy.sparse import csr_array

from kernel_multigrid.assembly import select_damping
from kernel_multigrid.const import StackMode
from kernel_multigrid.exceptions import DimensionError, DomainError
from kernel_multigrid.geometry import FLAT_TORUS, PointHierarchy, pairwise_distances
from kernel_multigrid.matrices import FlopLedger, SparseMatrix, sparse_matvec
from kernel_multigrid.multigrid import LevelStack, MgConfig, measure_contraction
from kernel_multigrid.sparsify import (
    build_truncated_stack,
    dense_levels,
    tail_bound,
    truncate,
    truncation_error_report,
    truncation_radius,
)

# ---------------------------------------------------------------------------
# truncation_radius
# ---------------------------------------------------------------------------


def test_truncation_radius() -> None:
    """r = K h |log h|."""
    assert truncation_radius(1 / math.e, 2.0) == pytest.approx(2 / math.e)
    assert truncation_radius(math.exp(-2.0), 1.0) == pytest.approx(2 * math.exp(-2.0))


@pytest.mark.parametrize(("h", "K"), [(1.0, 2.0), (1.5, 2.0), (0.5, 0.0)])
def test_truncation_radius_domain(h: float, K: float) -> None:
    """Fill distances of 1 or more and non-positive K have no radius."""
    with pytest.raises(DomainError):
        truncation_radius(h, K)


# ---------------------------------------------------------------------------
# truncate
# ---------------------------------------------------------------------------


def test_radius_beyond_the_diameter_keeps_everything(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """Truncation with r >= diameter reproduces the matrix."""
    points = torus_hierarchy.levels[1]
    matrix = torus_stack.systems[1].A
    truncated = truncate(matrix, points, points, FLAT_TORUS.diameter)
    np.testing.assert_array_equal(truncated.to_dense(), matrix)
    report = truncation_error_report(matrix, truncated)
    assert report.spectral_norm_diff == 0.0
    assert report.max_row_sum_diff == 0.0


def test_zero_radius_keeps_the_diagonal(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """Distinct points only keep their own entry at r = 0."""
    points = torus_hierarchy.levels[1]
    matrix = torus_stack.systems[1].A
    truncated = truncate(matrix, points, points, 0.0)
    assert truncated.nnz == 64
    np.testing.assert_array_equal(truncated.to_dense(), np.diag(np.diag(matrix)))


def test_truncation_drops_distant_entries(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """Kept entries lie within r and the dropped ones are reported."""
    points = torus_hierarchy.levels[2]
    matrix = torus_stack.systems[2].A
    truncated = truncate(matrix, points, points, 1.0)
    distance = pairwise_distances(FLAT_TORUS, points.coords, points.coords)
    np.testing.assert_array_equal(
        truncated.to_dense(), np.where(distance <= 1.0, matrix, 0.0)
    )
    report = truncation_error_report(matrix, truncated)
    assert 0.0 < report.spectral_norm_diff <= report.max_row_sum_diff


def test_truncation_is_idempotent(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """Truncating a truncated matrix with the same radius changes nothing."""
    points = torus_hierarchy.levels[2]
    once = truncate(torus_stack.systems[2].A, points, points, 1.0)
    twice = truncate(once, points, points, 1.0)
    assert twice.nnz == once.nnz
    np.testing.assert_array_equal(twice.row_offsets, once.row_offsets)
    np.testing.assert_array_equal(twice.column_indices, once.column_indices)
    np.testing.assert_array_equal(twice.values, once.values)


def test_truncation_checks_its_arguments(
    torus_stack: LevelStack, torus_hierarchy: PointHierarchy
) -> None:
    """The matrix must match the point sets and r must be non-negative."""
    points = torus_hierarchy.levels[1]
    with pytest.raises(DimensionError):
        truncate(torus_stack.systems[0].A, points, points, 1.0)
    with pytest.raises(DomainError):
        truncate(torus_stack.systems[1].A, points, points, -1.0)


# ---------------------------------------------------------------------------
# sparse_matvec
# ---------------------------------------------------------------------------


def test_sparse_identity_product() -> None:
    """id x = x at a cost of two operations per stored entry."""
    ledger = FlopLedger()
    x = np.arange(5.0)
    product = sparse_matvec(SparseMatrix(csr_array(np.eye(5))), x, ledger)
    np.testing.assert_array_equal(product, x)
    assert ledger.multiply_adds == 10


def test_sparse_zero_product() -> None:
    """A matrix without stored entries maps everything to zero for free."""
    ledger = FlopLedger()
    product = sparse_matvec(SparseMatrix(csr_array((3, 4))), np.ones(4), ledger)
    np.testing.assert_array_equal(product, np.zeros(3))
    assert ledger.multiply_adds == 0
    with pytest.raises(DimensionError):
        sparse_matvec(SparseMatrix(csr_array((3, 4))), np.ones(3))


# ---------------------------------------------------------------------------
# tail_bound
# ---------------------------------------------------------------------------


def test_tail_bound_decreases_with_the_radius() -> None:
    """Beyond r = d / c larger radii leave smaller tails."""
    bounds = [tail_bound(0.1, r, 2.0) for r in (1.0, 1.5, 2.0, 3.0, 4.0)]
    assert all(b < a for a, b in zip(bounds, bounds[1:], strict=False))


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_tail_bound_covers_the_grid_sum(
    torus_hierarchy: PointHierarchy, r: float
) -> None:
    """The bound exceeds the exact tail sum on the 16 x 16 torus grid."""
    points = torus_hierarchy.levels[2]
    distance = pairwise_distances(FLAT_TORUS, points.coords[:1], points.coords)[0]
    exact = float(np.exp(-distance[distance > r]).sum())
    assert exact <= tail_bound(torus_hierarchy.stats[2].q, r, 1.0)


def test_tail_bound_needs_a_radius_of_two_separations() -> None:
    """Radii below 2 q are refused."""
    with pytest.raises(DomainError):
        tail_bound(0.5, 0.9, 1.0)


# ---------------------------------------------------------------------------
# build_truncated_stack
# ---------------------------------------------------------------------------


def test_truncated_stack(fine_torus_stack: LevelStack) -> None:
    """The coarsest level stays dense and the finer matrices are sparse."""
    truncated = build_truncated_stack(fine_torus_stack, 4.0)
    assert truncated.mode is StackMode.TRUNCATED
    assert dense_levels(truncated) == [0]
    assert truncated.systems[1].A.nnz < 256 * 256
    pair = truncated.transfer(1)
    np.testing.assert_array_equal(pair.R.to_dense(), pair.P.to_dense().T)
    assert all(system.theta is not None for system in truncated.systems)


def test_truncated_stack_needs_a_positive_parameter(
    fine_torus_stack: LevelStack,
) -> None:
    """K must be positive."""
    with pytest.raises(DomainError):
        build_truncated_stack(fine_torus_stack, 0.0)


def test_truncated_stack_needs_a_hierarchy(torus_stack: LevelStack) -> None:
    """Stacks without points cannot be truncated."""
    bare = LevelStack(torus_stack.systems, torus_stack.transfers)
    with pytest.raises(DomainError):
        build_truncated_stack(bare, 4.0)


def test_wide_truncation_keeps_contraction(fine_torus_stack: LevelStack) -> None:
    """A generous radius leaves the cycle contracting."""
    truncated = build_truncated_stack(fine_torus_stack, 10.0)
    assert measure_contraction(truncated, 1, MgConfig()).value < 1.0


def test_truncated_damping_uses_the_given_seed(fine_torus_stack: LevelStack) -> None:
    """Level l of the truncated stack seeds its power iteration with seed + l."""
    truncated = build_truncated_stack(fine_torus_stack, 4.0, seed=7)
    for level, system in enumerate(truncated.systems):
        assert system.damping == select_damping(system, seed=7 + level)
