"""Stiffness matrices, load vectors, damping parameters and transfer matrices."""

from collections.abc import Callable
from dataclasses import dataclass
import logging
from typing import NamedTuple

import numpy as np

from .const import (
    DAMPING_FALLBACK_SAFETY,
    DAMPING_SAFETY,
    MANIFOLD_TORUS,
    POWER_ITERATION_STEPS,
    POWER_ITERATION_TOLERANCE,
)
from .exceptions import DimensionError, DomainError
from .geometry import (
    ManifoldDescriptor,
    MeshStats,
    PointSet,
    QuadratureRule,
    pairwise_distances,
)
from .kernelspace import (
    DecayFit,
    LagrangeBasis,
    energy_gram_matrix,
    envelope_fit,
    kernel_matrix,
    lagrange_values,
)
from .matrices import (
    Matrix,
    absolute_matvec,
    dense,
    diagonal,
    matvec,
    symmetric_part,
)

_LOGGER = logging.getLogger(__name__)

# quadrature nodes per block when accumulating load vectors
_NODE_BLOCK = 4096


@dataclass(frozen=True)
class EllipticOperator:
    """Constant coefficient operator -Laplace + a1 . grad + c."""

    c: float | Callable = 1.0
    advection: tuple[float, float] | None = None
    c_min: float = 1.0

    def __post_init__(self) -> None:
        """Validate ellipticity and normalize the advection vector."""
        if self.c_min <= 0:
            raise DomainError("Ellipticity constant c_min must be positive")
        if self.advection is not None:
            advection = tuple(float(value) for value in self.advection)
            if len(advection) != 2:
                raise DomainError("Advection must be a constant tangent 2-vector")
            object.__setattr__(self, "advection", advection)
        if not callable(self.c) and self.c < self.c_min:
            raise DomainError(f"Coefficient c={self.c} is below c_min={self.c_min}")

    @property
    def symmetric(self) -> bool:
        """Return True when the operator has no advection term."""
        return self.advection is None


class DampingChoice(NamedTuple):
    """Damping parameter and the power iteration estimate behind it."""

    theta: float
    lambda_max: float
    converged: bool


@dataclass(frozen=True, eq=False)
class LevelSystem:
    """Stiffness matrix, Jacobi diagonal and damping of one level."""

    level: int
    A: Matrix
    B: np.ndarray
    theta: float | None = None
    b: np.ndarray | None = None
    damping: DampingChoice | None = None
    symmetric: bool = True

    @property
    def size(self) -> int:
        """Return the number of unknowns."""
        return self.B.shape[0]

    def with_damping(self, damping: DampingChoice) -> "LevelSystem":
        """Return a copy using the given damping parameter."""
        return LevelSystem(
            self.level,
            self.A,
            self.B,
            damping.theta,
            self.b,
            damping,
            self.symmetric,
        )

    def with_matrix(self, matrix: Matrix) -> "LevelSystem":
        """Return a copy with a replaced stiffness matrix and its diagonal."""
        entries = np.asarray(diagonal(matrix), dtype=np.float64)
        if np.any(entries <= 0.0):
            raise DomainError(
                f"Non-positive diagonal entry on level {self.level}:"
                f" {float(np.min(entries)):.3e}"
            )
        return LevelSystem(
            self.level, matrix, entries, None, self.b, None, self.symmetric
        )


@dataclass(frozen=True, eq=False)
class TransferPair:
    """Prolongation P (fine x coarse) and restriction R = P^T."""

    P: Matrix
    R: Matrix


def measure_scale(manifold: ManifoldDescriptor) -> float:
    """Return the factor between the energy series and the L2 pairing."""
    return manifold.volume if manifold.kind == MANIFOLD_TORUS else 1.0


def assemble_stiffness(basis: LagrangeBasis, op: EllipticOperator) -> LevelSystem:
    """Return the Galerkin matrix A[xi, zeta] = a(chi_zeta, chi_xi).

    G holds a(phi(., x), phi(., y)) for the kernel translates, so A is the
    transpose of C^T G C. Both agree when there is no advection.
    """
    kernel = basis.kernel
    gram = energy_gram_matrix(kernel, op, basis.points, basis.points)
    coefficients = basis.coefficients
    energy = coefficients.T @ gram @ coefficients
    stiffness = measure_scale(kernel.manifold) * np.ascontiguousarray(energy.T)
    if op.symmetric:
        stiffness = (stiffness + stiffness.T) / 2.0
    pivots = np.diag(stiffness).copy()
    if np.any(pivots <= 0.0):
        raise DomainError(f"Non-positive stiffness diagonal on level {basis.level}")
    _LOGGER.debug(
        "Stiffness on level %d: n=%d, diagonal in [%.3e, %.3e]",
        basis.level,
        len(basis),
        float(pivots.min()),
        float(pivots.max()),
    )
    return LevelSystem(basis.level, stiffness, pivots, symmetric=op.symmetric)


def assemble_load(
    basis: LagrangeBasis,
    f: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    quad: QuadratureRule,
) -> np.ndarray:
    """Return b_xi = sum_q w_q chi_xi(x_q) f(x_q)."""
    nodes = quad.nodes
    values = np.asarray(f(nodes.coords) if callable(f) else f, dtype=np.float64)
    if values.shape != (len(nodes),):
        raise DimensionError("Right-hand side values do not match quadrature nodes")
    weighted = quad.weights * values
    accumulated = np.zeros(len(basis))
    for start in range(0, len(nodes), _NODE_BLOCK):
        block = slice(start, start + _NODE_BLOCK)
        block_nodes = PointSet(nodes.coords[block], nodes.manifold, nodes.lattice)
        accumulated += kernel_matrix(basis.kernel, basis.points, block_nodes) @ (
            weighted[block]
        )
    return basis.coefficients.T @ accumulated


def select_damping(
    system: LevelSystem,
    *,
    steps: int = POWER_ITERATION_STEPS,
    seed: int = 0,
) -> DampingChoice:
    """Return theta = 0.9 / lambda_max(B^-1/2 A B^-1/2) by power iteration.

    Non-symmetric matrices use their symmetric part. When the estimate does
    not settle to a relative change below 1e-6, the safety factor drops to 0.8
    and lambda_max is replaced by the Gershgorin bound max_i sum_j |S_ij|,
    which never underestimates it.
    """
    operator = system.A if system.symmetric else symmetric_part(system.A)
    scale = 1.0 / np.sqrt(system.B)
    rng = np.random.default_rng(seed)
    vector = rng.standard_normal(system.size)
    vector /= np.linalg.norm(vector)
    estimate, change = 0.0, np.inf
    for _ in range(steps):
        image = scale * matvec(operator, scale * vector)
        previous, estimate = estimate, float(np.linalg.norm(image))
        if estimate == 0.0:
            break
        change = abs(estimate - previous) / estimate
        vector = image / estimate
    converged = change < POWER_ITERATION_TOLERANCE
    if estimate <= 0.0:
        raise DomainError(f"Stiffness matrix on level {system.level} annihilates B")
    safety = DAMPING_SAFETY
    if not converged:
        safety = DAMPING_FALLBACK_SAFETY
        bound = float(np.max(scale * absolute_matvec(operator, scale)))
        _LOGGER.warning(
            "Power iteration on level %d did not settle (relative change %.2e),"
            " using the row sum bound %.4g instead of %.4g",
            system.level,
            change,
            bound,
            estimate,
        )
        estimate = max(estimate, bound)
    theta = min(safety / estimate, float(np.nextafter(1.0, 0.0)))
    return DampingChoice(theta, estimate, converged)


def check_damping(system: LevelSystem, samples: int = 50, seed: int = 0) -> bool:
    """Return whether theta <Av, v> <= <Bv, v> holds on random vectors."""
    if system.theta is None:
        raise DomainError("Damping parameter has not been selected")
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((system.size, samples))
    energy = np.einsum("ij,ij->j", matvec(system.A, vectors), vectors)
    weighted = np.einsum("i,ij,ij->j", system.B, vectors, vectors)
    return bool(np.all(system.theta * energy <= weighted * (1.0 + 1e-12)))


def build_prolongation(coarse: LagrangeBasis, fine_points: PointSet) -> TransferPair:
    """Return P[eta, xi] = chi_xi(eta) for fine eta, coarse xi, and R = P^T."""
    coarse_points = coarse.points
    count = len(coarse_points)
    if (
        coarse_points.manifold.kind != fine_points.manifold.kind
        or len(fine_points) < count
        or not np.array_equal(fine_points.coords[:count], coarse_points.coords)
    ):
        raise DomainError("Fine points do not start with the coarse points")
    prolongation = lagrange_values(coarse, fine_points)
    prolongation[:count] = np.eye(count)
    return TransferPair(prolongation, np.ascontiguousarray(prolongation.T))


def stiffness_decay(
    system: LevelSystem, points: PointSet, stats: MeshStats
) -> DecayFit:
    """Fit log|A_xi eta| / max|A| against dist(xi, eta)/h."""
    entries = np.abs(dense(system.A))
    distance = pairwise_distances(points.manifold, points.coords, points.coords)
    return envelope_fit(distance / stats.h, entries / entries.max())
