"""Spectral Sobolev kernels, Lagrange bases and basis evaluation."""

from dataclasses import dataclass
from functools import lru_cache
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import LinAlgError, cho_factor, cho_solve, ldl
from scipy.spatial.distance import cdist
from scipy.stats import linregress

from .const import (
    CARDINALITY_TOLERANCE,
    DECAY_FLOOR,
    DECAY_MIN_SAMPLES,
    MANIFOLD_SPHERE,
    MANIFOLD_TORUS,
    SERIES_TAIL_TOLERANCE,
    SPHERE_MIN_CUTOFF,
    TORUS_MIN_CUTOFF,
    TWO_PI,
)
from .exceptions import (
    ConditioningError,
    DimensionError,
    DomainError,
    InsufficientDataError,
    UnsupportedOperatorError,
)
from .geometry import (
    ManifoldDescriptor,
    MeshStats,
    PointSet,
    QuadratureRule,
    pairwise_distances,
    probe_points,
    separation_distance,
)
from .helpers import basis_cache_bytes, parse_basis_cache, write_file_atomic

if TYPE_CHECKING:
    from .assembly import EllipticOperator

_LOGGER = logging.getLogger(__name__)

# pairs evaluated per block by the direct torus series
_PAIR_BLOCK = 2048
# lattice table entries gathered per block
_GATHER_BLOCK = 1 << 22


def relative_tail(manifold: ManifoldDescriptor, m: int, cutoff: int) -> float:
    """Return an upper bound of the dropped series tail relative to phi(x, x)."""
    if manifold.kind == MANIFOLD_TORUS:
        return 4.0 * (1.0 + cutoff**2) ** (1 - m) / (m - 1)
    return (1.0 + cutoff * (cutoff + 1)) ** (1 - m) / (m - 1)


def series_cutoff(
    manifold: ManifoldDescriptor,
    m: int,
    h: float | None = None,
    tolerance: float = SERIES_TAIL_TOLERANCE,
) -> int:
    """Return the smallest admissible truncation degree of the eigen-series."""
    if manifold.kind == MANIFOLD_TORUS:
        cutoff = TORUS_MIN_CUTOFF
        tail = math.sqrt((4.0 / ((m - 1) * tolerance)) ** (1.0 / (m - 1)) - 1.0)
    else:
        cutoff = SPHERE_MIN_CUTOFF
        level = (1.0 / ((m - 1) * tolerance)) ** (1.0 / (m - 1)) - 1.0
        tail = (-1.0 + math.sqrt(1.0 + 4.0 * max(level, 0.0))) / 2.0
    if h is not None:
        cutoff = max(cutoff, math.ceil(8.0 / h))
    cutoff = max(cutoff, math.ceil(tail))
    while relative_tail(manifold, m, cutoff) >= tolerance:
        cutoff += 1
    return cutoff


@dataclass(frozen=True, slots=True)
class SpectralKernel:
    """Sobolev reproducing kernel with eigen-coefficients (1 + lambda)^-m."""

    manifold: ManifoldDescriptor
    m: int
    series_cutoff: int

    def __post_init__(self) -> None:
        """Validate the smoothness order and cutoff."""
        if not isinstance(self.m, int) or self.m < 3:
            raise DomainError(f"Smoothness order must be an integer >= 3, got {self.m}")
        if self.series_cutoff < 1:
            raise DomainError("Series cutoff must be positive")

    @classmethod
    def create(
        cls,
        manifold: ManifoldDescriptor,
        m: int,
        h: float | None = None,
        tolerance: float = SERIES_TAIL_TOLERANCE,
    ) -> "SpectralKernel":
        """Create a kernel whose dropped series tail is below tolerance."""
        if not isinstance(m, int) or m < 3:
            raise DomainError(f"Smoothness order must be an integer >= 3, got {m}")
        cutoff = series_cutoff(manifold, m, h, tolerance)
        _LOGGER.debug("Kernel on %s with m=%d uses cutoff %d", manifold.kind, m, cutoff)
        return cls(manifold, m, cutoff)

    @property
    def tail(self) -> float:
        """Return the relative tail bound of the truncated series."""
        return relative_tail(self.manifold, self.m, self.series_cutoff)


# ---------------------------------------------------------------------------
# series coefficients
# ---------------------------------------------------------------------------


def _multiplicity(cutoff: int) -> np.ndarray:
    """Return the half-range multiplicities 1, 2, 2, ... of cosine terms."""
    mult = np.full(cutoff + 1, 2.0)
    mult[0] = 1.0
    return mult


@lru_cache(maxsize=32)
def _torus_weights(
    series: tuple, cutoff: int
) -> tuple[np.ndarray, np.ndarray | None]:
    """Return the half-range cosine weights and the sine weights of a series.

    series is ("kernel", m) or ("gram", m, c); the sine weights belong to
    the advection term sum (a.k)(1+|k|^2)^-2m sin(k.d).
    """
    k = np.arange(cutoff + 1, dtype=np.float64)
    mult = _multiplicity(cutoff)
    squares = k[:, None] ** 2 + k[None, :] ** 2
    if series[0] == "kernel":
        weights = np.outer(mult, mult) * (1.0 + squares) ** (-series[1])
        weights.setflags(write=False)
        return weights, None
    m, c = series[1], series[2]
    decay = (1.0 + squares) ** (-2 * m)
    weights = np.outer(mult, mult) * (squares + c) * decay
    sine = 2.0 * k[:, None] * mult[None, :] * decay
    weights.setflags(write=False)
    sine.setflags(write=False)
    return weights, sine


def _sphere_coefficients(series: tuple, cutoff: int) -> np.ndarray:
    """Return the Legendre coefficients of a zonal series."""
    degree = np.arange(cutoff + 1, dtype=np.float64)
    eigen = degree * (degree + 1.0)
    scale = (2.0 * degree + 1.0) / (4.0 * math.pi)
    if series[0] == "kernel":
        return (1.0 + eigen) ** (-series[1]) * scale
    return (eigen + series[2]) * (1.0 + eigen) ** (-2 * series[1]) * scale


# ---------------------------------------------------------------------------
# torus evaluation
# ---------------------------------------------------------------------------


def _reduce(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (|d| folded into [0, pi], sign) so that cos and sin keep parity."""
    sign = np.where(delta < 0.0, -1.0, 1.0)
    angle = np.abs(delta) % TWO_PI
    folded = angle > math.pi
    angle = np.where(folded, TWO_PI - angle, angle)
    return angle, np.where(folded, -sign, sign)


def _torus_direct(
    series: tuple,
    cutoff: int,
    delta: np.ndarray,
    advection: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Evaluate the cosine part and the sine part at coordinate differences."""
    weights, sine = _torus_weights(series, cutoff)
    k = np.arange(cutoff + 1, dtype=np.float64)
    count = delta.shape[0]
    even = np.empty(count)
    odd = np.zeros(count) if advection is not None else None
    for start in range(0, count, _PAIR_BLOCK):
        block = slice(start, start + _PAIR_BLOCK)
        a1, s1 = _reduce(delta[block, 0])
        a2, s2 = _reduce(delta[block, 1])
        cos1, cos2 = np.cos(np.outer(a1, k)), np.cos(np.outer(a2, k))
        even[block] = np.einsum("pi,pi->p", cos1 @ weights, cos2)
        if odd is not None and sine is not None:
            sin1 = s1[:, None] * np.sin(np.outer(a1, k))
            sin2 = s2[:, None] * np.sin(np.outer(a2, k))
            odd[block] = advection[0] * np.einsum(
                "pi,pi->p", sin1 @ sine, cos2
            ) + advection[1] * np.einsum("pi,pi->p", cos1 @ sine.T, sin2)
    return even, odd


def _lattice_cos(size: int, cutoff: int) -> np.ndarray:
    """Return cos(2 pi k d / size) for d < size, k <= cutoff, exactly even in d."""
    phase = np.outer(np.arange(size), np.arange(cutoff + 1)) % size
    phase = np.minimum(phase, size - phase)
    return np.cos(TWO_PI * phase / size)


def _lattice_sin(size: int, cutoff: int) -> np.ndarray:
    """Return sin(2 pi k d / size) for d < size, k <= cutoff, exactly odd in d."""
    phase = np.outer(np.arange(size), np.arange(cutoff + 1)) % size
    sign = np.where(2 * phase > size, -1.0, 1.0)
    sign[2 * phase == size] = 0.0
    return sign * np.sin(TWO_PI * np.minimum(phase, size - phase) / size)


@lru_cache(maxsize=16)
def _torus_tables(
    series: tuple,
    cutoff: int,
    size: int,
    advection: tuple[float, float] | None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Return the series on all lattice differences (cosine part, sine part)."""
    weights, sine = _torus_weights(series, cutoff)
    cos_m = _lattice_cos(size, cutoff)
    even = cos_m @ weights @ cos_m.T
    even.setflags(write=False)
    if advection is None or sine is None:
        return even, None
    sin_m = _lattice_sin(size, cutoff)
    odd = advection[0] * (sin_m @ sine @ cos_m.T) + advection[1] * (
        cos_m @ sine.T @ sin_m.T
    )
    odd.setflags(write=False)
    return even, odd


def _gather(table: np.ndarray, rows: np.ndarray, cols: np.ndarray, size: int):
    """Return table[(rows_i - cols_j) mod size] for all index pairs."""
    out = np.empty((rows.shape[0], cols.shape[0]))
    step = max(1, _GATHER_BLOCK // max(cols.shape[0], 1))
    for start in range(0, rows.shape[0], step):
        block = rows[start : start + step]
        out[start : start + step] = table[
            (block[:, None, 0] - cols[None, :, 0]) % size,
            (block[:, None, 1] - cols[None, :, 1]) % size,
        ]
    return out


def _series_matrix(
    kernel: SpectralKernel,
    series: tuple,
    first: PointSet,
    second: PointSet,
    advection: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Evaluate a series on all point pairs as (even part, odd part)."""
    if first.manifold.kind != kernel.manifold.kind or (
        second.manifold.kind != kernel.manifold.kind
    ):
        raise DomainError("Points and kernel live on different manifolds")
    if kernel.manifold.kind == MANIFOLD_SPHERE:
        cosine = 1.0 - cdist(first.coords, second.coords) ** 2 / 2.0
        coefficients = _sphere_coefficients(series, kernel.series_cutoff)
        return legendre.legval(np.clip(cosine, -1.0, 1.0), coefficients), None

    if first.lattice is not None and second.lattice is not None:
        size = math.lcm(first.lattice, second.lattice)
        even_table, odd_table = _torus_tables(
            series, kernel.series_cutoff, size, advection
        )
        rows = first.lattice_indices() * (size // first.lattice)
        cols = second.lattice_indices() * (size // second.lattice)
        even = _gather(even_table, rows, cols, size)
        odd = None if odd_table is None else _gather(odd_table, rows, cols, size)
        return even, odd

    delta = (first.coords[:, None, :] - second.coords[None, :, :]).reshape(-1, 2)
    even, odd = _torus_direct(series, kernel.series_cutoff, delta, advection)
    shape = (len(first), len(second))
    return even.reshape(shape), None if odd is None else odd.reshape(shape)


def _as_points(kernel: SpectralKernel, x) -> PointSet:
    """Wrap raw coordinates as a point set on the kernel's manifold."""
    if isinstance(x, PointSet):
        return x
    return PointSet(np.atleast_2d(x), kernel.manifold)


# ---------------------------------------------------------------------------
# kernel and energy evaluation
# ---------------------------------------------------------------------------


def kernel_matrix(kernel: SpectralKernel, first, second) -> np.ndarray:
    """Return the matrix (phi(x, y)) for x in first, y in second."""
    first = _as_points(kernel, first)
    second = _as_points(kernel, second)
    matrix, _ = _series_matrix(kernel, ("kernel", kernel.m), first, second)
    if first is second:
        matrix = (matrix + matrix.T) / 2.0
    return matrix


def kernel_eval(kernel: SpectralKernel, x, y) -> float:
    """Return phi(x, y)."""
    return float(kernel_matrix(kernel, x, y)[0, 0])


def _gram_series(
    kernel: SpectralKernel, op: "EllipticOperator"
) -> tuple[tuple, tuple[float, float] | None]:
    """Return the energy series key and advection of a supported operator."""
    if callable(op.c):
        raise UnsupportedOperatorError("Variable coefficients are not supported")
    if op.advection is not None and kernel.manifold.kind != MANIFOLD_TORUS:
        raise UnsupportedOperatorError("Advection is only supported on the torus")
    return ("gram", kernel.m, float(op.c)), op.advection


def energy_gram_matrix(
    kernel: SpectralKernel, op: "EllipticOperator", first, second
) -> np.ndarray:
    """Return (a(phi(., x), phi(., y))) for x in first, y in second.

    The torus series omits the torus measure 4 pi^2; assembly applies it.
    """
    first = _as_points(kernel, first)
    second = _as_points(kernel, second)
    series, advection = _gram_series(kernel, op)
    even, odd = _series_matrix(kernel, series, first, second, advection)
    if first is second:
        even = (even + even.T) / 2.0
        if odd is not None:
            odd = (odd - odd.T) / 2.0
    return even if odd is None else even + odd


def energy_gram_eval(kernel: SpectralKernel, op: "EllipticOperator", x, y) -> float:
    """Return a(phi(., x), phi(., y)) evaluated spectrally."""
    return float(energy_gram_matrix(kernel, op, x, y)[0, 0])


# ---------------------------------------------------------------------------
# Lagrange basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LagrangeBasis:
    """Coefficients C with K C = I turning kernel translates into cardinal functions."""

    level: int
    coefficients: np.ndarray
    kernel: SpectralKernel
    points: PointSet
    cardinality_error: float

    def __len__(self) -> int:
        """Return the number of basis functions."""
        return len(self.points)


def _smallest_pivot(matrix: np.ndarray) -> float:
    """Return the smallest pivot of a symmetric indefinite factorization."""
    _, block_diagonal, _ = ldl(matrix, lower=True)
    return float(np.min(np.diag(block_diagonal)))


def compute_lagrange(
    kernel: SpectralKernel,
    points: PointSet,
    level: int = 0,
    *,
    tolerance: float = CARDINALITY_TOLERANCE,
    coefficients: np.ndarray | None = None,
) -> LagrangeBasis:
    """Solve K C = I by a Cholesky factorization and verify cardinality.

    Precomputed coefficients (from a basis cache) skip the solve but are
    verified the same way.
    """
    if len(points) >= 2:
        separation_distance(points)
    elif len(points) == 0:
        raise DomainError("Lagrange basis needs at least one point")
    collocation = kernel_matrix(kernel, points, points)
    identity = np.eye(len(points))
    if coefficients is None:
        try:
            factor = cho_factor(collocation, lower=True)
        except LinAlgError as err:
            pivot = _smallest_pivot(collocation)
            raise ConditioningError(
                f"Collocation matrix is not numerically positive definite"
                f" (smallest pivot {pivot:.3e})",
                smallest_pivot=pivot,
            ) from err
        coefficients = cho_solve(factor, identity)
        coefficients = (coefficients + coefficients.T) / 2.0
    elif coefficients.shape != collocation.shape:
        raise DimensionError("Cached coefficients do not match the point set")
    error = float(np.max(np.abs(collocation @ coefficients - identity)))
    if error > tolerance:
        pivot = _smallest_pivot(collocation)
        raise ConditioningError(
            f"Cardinality error {error:.3e} exceeds {tolerance:.1e}"
            f" (smallest pivot {pivot:.3e})",
            smallest_pivot=pivot,
        )
    _LOGGER.debug(
        "Lagrange basis on level %d with %d points, cardinality error %.2e",
        level,
        len(points),
        error,
    )
    coefficients.setflags(write=False)
    return LagrangeBasis(level, coefficients, kernel, points, error)


def lagrange_values(basis: LagrangeBasis, x) -> np.ndarray:
    """Return the matrix (chi_xi(x)) with rows for x and columns for xi."""
    return kernel_matrix(basis.kernel, x, basis.points) @ basis.coefficients


def eval_lagrange(basis: LagrangeBasis, index: int, x) -> float:
    """Return chi_index(x)."""
    if not 0 <= index < len(basis):
        raise DomainError(f"Basis index {index} out of range")
    row = kernel_matrix(basis.kernel, x, basis.points)[0]
    return float(row @ basis.coefficients[:, index])


def save_basis_cache(path: Path, basis: LagrangeBasis) -> None:
    """Write the basis coefficients to a LAGB cache file."""
    write_file_atomic(
        path,
        basis_cache_bytes(
            basis.coefficients, basis.kernel.m, basis.kernel.manifold.tag
        ),
    )


def load_basis_cache(
    path: Path, kernel: SpectralKernel, count: int
) -> np.ndarray | None:
    """Return cached coefficients if the cache matches the kernel and size."""
    if not path.is_file():
        return None
    coefficients, m, tag = parse_basis_cache(path.read_bytes())
    if m != kernel.m or tag != kernel.manifold.tag or coefficients.shape[0] != count:
        _LOGGER.warning("Ignoring basis cache %s: it belongs to another setup", path)
        return None
    return coefficients


# ---------------------------------------------------------------------------
# decay and stability measurements
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class DecayFit:
    """Exponential decay fit of log values against dist/h."""

    slope: float
    intercept: float
    r_squared: float
    sample_range: tuple[float, float]
    samples: int


def envelope_fit(
    scaled_distance: np.ndarray,
    values: np.ndarray,
    *,
    floor: float = DECAY_FLOOR,
    bin_width: float = 0.5,
) -> DecayFit:
    """Fit the log of the per-bin maximum of values against scaled distance."""
    values = np.abs(np.ravel(values))
    scaled_distance = np.ravel(scaled_distance)
    usable = (values >= floor) & (values <= 1.0)
    if np.count_nonzero(usable) < DECAY_MIN_SAMPLES:
        raise InsufficientDataError(
            f"Only {np.count_nonzero(usable)} usable samples, need {DECAY_MIN_SAMPLES}"
        )
    distance, values = scaled_distance[usable], values[usable]
    bins = np.floor(distance / bin_width).astype(np.int64)
    order = np.lexsort((-values, bins))
    _, first = np.unique(bins[order], return_index=True)
    peak = order[first]
    if peak.size < 3:
        raise InsufficientDataError(f"Only {peak.size} distance bins populated")
    fit = linregress(distance[peak], np.log(values[peak]))
    return DecayFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r_squared=float(fit.rvalue**2),
        sample_range=(float(distance.min()), float(distance.max())),
        samples=int(distance.size),
    )


def decay_probes(basis: LagrangeBasis, probe_density: int | None = None) -> PointSet:
    """Return the probe set used to sample a Lagrange function."""
    manifold = basis.kernel.manifold
    if manifold.kind == MANIFOLD_TORUS and basis.points.lattice is not None:
        lattice = basis.points.lattice
        density = probe_density or 4 * lattice
        return probe_points(manifold, -(-density // lattice) * lattice)
    return probe_points(manifold, probe_density or 64)


def decay_profile(
    basis: LagrangeBasis,
    index: int,
    stats: MeshStats,
    probe_density: int | None = None,
) -> DecayFit:
    """Fit log|chi_index(x)| against dist(x, xi)/h on a dense probe set."""
    if len(basis) < 2:
        raise InsufficientDataError("A single-point basis has no decay range")
    if not 0 <= index < len(basis):
        raise DomainError(f"Basis index {index} out of range")
    probes = decay_probes(basis, probe_density)
    values = kernel_matrix(basis.kernel, probes, basis.points) @ (
        basis.coefficients[:, index]
    )
    distance = pairwise_distances(
        basis.kernel.manifold, probes.coords, basis.points.coords[index : index + 1]
    )[:, 0]
    return envelope_fit(distance / stats.h, values)


def riesz_ratios(
    basis: LagrangeBasis,
    quad: QuadratureRule,
    q: float,
    samples: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """Return ||sum a_xi chi_xi||_L2 / (q^(d/2) ||a||_2) for random vectors a."""
    rng = np.random.default_rng(seed)
    amplitudes = rng.standard_normal((len(basis), samples))
    values = lagrange_values(basis, quad.nodes) @ amplitudes
    norms = np.sqrt(quad.weights @ values**2)
    dim = basis.kernel.manifold.dim
    return norms / (q ** (dim / 2.0) * np.linalg.norm(amplitudes, axis=0))
