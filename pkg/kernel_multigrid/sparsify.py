"""Distance based truncation of stiffness and transfer matrices."""

import logging
import math
from typing import NamedTuple

import numpy as np

from .assembly import TransferPair, select_damping
from .const import MANIFOLD_SPHERE, StackMode
from .exceptions import DimensionError, DomainError
from .geometry import (
    FLAT_TORUS,
    ManifoldDescriptor,
    PointSet,
    neighbor_tree,
    paired_distances,
)
from .matrices import Matrix, SparseMatrix, dense, spectral_norm, stored_entries
from .multigrid import LevelStack

_LOGGER = logging.getLogger(__name__)

# relative widening of the tree search radius before the exact distance filter
_SEARCH_SLACK = 1e-9
_SERIES_TOLERANCE = 1e-12


def truncation_radius(h: float, K: float) -> float:
    """Return r = K h |log h|."""
    if not 0.0 < h < 1.0:
        raise DomainError(f"Truncation needs a fill distance in (0, 1), got {h}")
    if K <= 0.0:
        raise DomainError(f"Truncation parameter must be positive, got {K}")
    return K * h * abs(math.log(h))


def _search_radius(manifold: ManifoldDescriptor, r: float) -> float:
    """Return the KD-tree radius that covers geodesic radius r."""
    if manifold.kind == MANIFOLD_SPHERE:
        return 2.0 * math.sin(min(r, math.pi) / 2.0) * (1.0 + _SEARCH_SLACK)
    return r * (1.0 + _SEARCH_SLACK)


def truncate(
    M: Matrix, row_pts: PointSet, col_pts: PointSet, r: float
) -> SparseMatrix:
    """Keep the entries (xi, eta) with dist(xi, eta) <= r, unchanged."""
    matrix = dense(M)
    if matrix.shape != (len(row_pts), len(col_pts)):
        raise DimensionError(
            f"Matrix of shape {matrix.shape} does not match"
            f" {len(row_pts)} x {len(col_pts)} points"
        )
    if r < 0.0:
        raise DomainError("Truncation radius must be non-negative")
    manifold = row_pts.manifold
    if r >= manifold.diameter:
        rows, cols = np.divmod(np.arange(matrix.size), matrix.shape[1])
    else:
        neighbors = neighbor_tree(row_pts).query_ball_tree(
            neighbor_tree(col_pts), _search_radius(manifold, r)
        )
        counts = np.fromiter(
            (len(found) for found in neighbors), np.int64, len(neighbors)
        )
        rows = np.repeat(np.arange(len(row_pts)), counts)
        cols = np.fromiter(
            (col for found in neighbors for col in found), np.int64, int(counts.sum())
        )
        within = (
            paired_distances(manifold, row_pts.coords[rows], col_pts.coords[cols]) <= r
        )
        rows, cols = rows[within], cols[within]
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
    return SparseMatrix.from_arrays(matrix[rows, cols], rows, cols, matrix.shape)


class TruncationError(NamedTuple):
    """Size of the entries dropped by a truncation."""

    spectral_norm_diff: float
    # max l1 norm over rows and columns of the dropped entries
    max_row_sum_diff: float


def truncation_error_report(M: Matrix, M_r: SparseMatrix) -> TruncationError:
    """Return ||M - M_r||_2 and the largest l1 row or column sum of M - M_r."""
    if M.shape != M_r.shape:
        raise DimensionError(f"Shapes {M.shape} and {M_r.shape} differ")
    dropped = np.abs(dense(M) - M_r.to_dense())
    row_sums = dropped.sum(axis=1, initial=0.0)
    col_sums = dropped.sum(axis=0, initial=0.0)
    largest = max(float(row_sums.max(initial=0.0)), float(col_sums.max(initial=0.0)))
    return TruncationError(spectral_norm(dense(M) - M_r.to_dense()), largest)


def tail_bound(
    q: float, r: float, c: float, manifold: ManifoldDescriptor = FLAT_TORUS
) -> float:
    """Bound sum over dist(xi, eta) > r of exp(-c dist(xi, eta)) for separation q.

    Evaluates (beta/alpha) (r/q)^d exp(-c r) sum_j (j + 2)^d exp(-c j q) with
    the series summed to a relative accuracy of 1e-12.
    """
    if q <= 0.0 or c <= 0.0:
        raise DomainError("Separation distance and decay rate must be positive")
    if r < 2.0 * q:
        raise DomainError(f"Radius {r} is below twice the separation distance {q}")
    dim = manifold.dim
    peak = dim / (c * q)
    total, j = 0.0, 0
    while True:
        term = (j + 2) ** dim * math.exp(-c * j * q)
        total += term
        if j + 2 > peak and term <= _SERIES_TOLERANCE * total:
            break
        j += 1
    return manifold.volume_ratio * (r / q) ** dim * math.exp(-c * r) * total


def build_truncated_stack(
    stack: LevelStack, K: float, seed: int = 0
) -> LevelStack:
    """Replace A, P and R by truncations with radii r_l = K h_l |log h_l|.

    The coarsest A and every level with h >= 1 stay dense. P into level l
    uses the radius of level l - 1 and R is the transpose of the truncated P.
    B and theta are recomputed from the truncated A, the power iteration of
    level l seeded with seed + l.
    """
    hierarchy = stack.hierarchy
    if hierarchy is None:
        raise DomainError("Truncation needs the point hierarchy of the stack")
    if K <= 0.0:
        raise DomainError(f"Truncation parameter must be positive, got {K}")
    radii = [
        truncation_radius(stats.h, K) if stats.h < 1.0 else None
        for stats in hierarchy.stats
    ]
    systems = []
    for level, system in enumerate(stack.systems):
        points = hierarchy.levels[level]
        if level == 0 or radii[level] is None:
            _LOGGER.debug("Level %d keeps a dense stiffness matrix", level)
            truncated = system.with_matrix(dense(system.A))
        else:
            truncated = system.with_matrix(
                truncate(system.A, points, points, radii[level])
            )
        damping = select_damping(truncated, seed=seed + level)
        systems.append(truncated.with_damping(damping))

    transfers = []
    for level in range(1, len(stack.systems)):
        pair = stack.transfer(level)
        radius = radii[level - 1]
        if radius is None:
            transfers.append(pair)
            continue
        prolongation = truncate(
            pair.P, hierarchy.levels[level], hierarchy.levels[level - 1], radius
        )
        transfers.append(TransferPair(prolongation, prolongation.transpose()))
    _LOGGER.info(
        "Truncated stack with K=%g: stored entries %s",
        K,
        [stored_entries(system.A) for system in systems],
    )
    return LevelStack(
        tuple(systems), tuple(transfers), StackMode.TRUNCATED, hierarchy, stack.bases
    )


def dense_levels(stack: LevelStack) -> list[int]:
    """Return the levels whose stiffness matrix is stored densely."""
    return [
        level
        for level, system in enumerate(stack.systems)
        if not isinstance(system.A, SparseMatrix)
    ]
