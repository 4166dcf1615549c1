"""Surfaces, nested point hierarchies, distances, mesh norms and quadrature."""

from dataclasses import dataclass, field
import logging
import math
from typing import Any

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .const import (
    MANIFOLD_SPHERE,
    MANIFOLD_TAGS,
    MANIFOLD_TORUS,
    MAX_POINTS,
    SURFACE_TOLERANCE,
    TWO_PI,
)
from .exceptions import CapacityError, DomainError

_LOGGER = logging.getLogger(__name__)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

ICOSAHEDRON_VERTICES = (
    (-1.0, GOLDEN, 0.0),
    (1.0, GOLDEN, 0.0),
    (-1.0, -GOLDEN, 0.0),
    (1.0, -GOLDEN, 0.0),
    (0.0, -1.0, GOLDEN),
    (0.0, 1.0, GOLDEN),
    (0.0, -1.0, -GOLDEN),
    (0.0, 1.0, -GOLDEN),
    (GOLDEN, 0.0, -1.0),
    (GOLDEN, 0.0, 1.0),
    (-GOLDEN, 0.0, -1.0),
    (-GOLDEN, 0.0, 1.0),
)
ICOSAHEDRON_FACES = (
    (0, 11, 5),
    (0, 5, 1),
    (0, 1, 7),
    (0, 7, 10),
    (0, 10, 11),
    (1, 5, 9),
    (5, 11, 4),
    (11, 10, 2),
    (10, 7, 6),
    (7, 1, 8),
    (3, 9, 4),
    (3, 4, 2),
    (3, 2, 6),
    (3, 6, 8),
    (3, 8, 9),
    (4, 9, 5),
    (2, 4, 11),
    (6, 2, 10),
    (8, 6, 7),
    (9, 8, 1),
)


@dataclass(frozen=True, slots=True)
class ManifoldDescriptor:
    """A closed surface with its closed-form diameter and volume."""

    kind: str
    dim: int
    diameter: float
    volume: float
    # ambient coordinates per point: 3 for the sphere, 2 angles for the torus
    coordinate_dim: int
    # (alpha, beta) with alpha r^d <= mu(B(x, r)) <= beta r^d for r up to the diameter
    ball_constants: tuple[float, float]

    @property
    def tag(self) -> int:
        """Return the manifold tag used in binary caches."""
        return MANIFOLD_TAGS[self.kind]

    @property
    def volume_ratio(self) -> float:
        """Return the ball volume ratio beta/alpha."""
        alpha, beta = self.ball_constants
        return beta / alpha


UNIT_SPHERE = ManifoldDescriptor(
    kind=MANIFOLD_SPHERE,
    dim=2,
    diameter=math.pi,
    volume=4.0 * math.pi,
    coordinate_dim=3,
    ball_constants=(4.0 / math.pi, math.pi),
)
FLAT_TORUS = ManifoldDescriptor(
    kind=MANIFOLD_TORUS,
    dim=2,
    diameter=math.pi * math.sqrt(2.0),
    volume=4.0 * math.pi**2,
    coordinate_dim=2,
    ball_constants=(2.0, math.pi),
)


def manifold_from_name(name: str) -> ManifoldDescriptor:
    """Return the manifold descriptor for a config name."""
    match name:
        case "sphere":
            return UNIT_SPHERE
        case "torus":
            return FLAT_TORUS
    raise DomainError(f"Unknown manifold {name!r}")


@dataclass(frozen=True, eq=False)
class PointSet:
    """An ordered finite set of surface points."""

    coords: np.ndarray
    manifold: ManifoldDescriptor
    # torus only: the points lie on the regular lattice with this many points per axis
    lattice: int | None = None

    def __post_init__(self) -> None:
        """Validate the points and freeze the coordinate array."""
        coords = np.array(self.coords, dtype=np.float64, copy=True, ndmin=2)
        if coords.size == 0:
            coords = coords.reshape(0, self.manifold.coordinate_dim)
        if coords.shape[1] != self.manifold.coordinate_dim:
            raise DomainError(
                f"{self.manifold.kind} points need {self.manifold.coordinate_dim}"
                f" coordinates, got {coords.shape[1]}"
            )
        _check_on_surface(self.manifold, coords)
        if self.lattice is not None:
            if self.manifold.kind != MANIFOLD_TORUS:
                raise DomainError("Only torus point sets live on a lattice")
            scaled = coords * self.lattice / TWO_PI
            if np.max(np.abs(scaled - np.rint(scaled)), initial=0.0) > 1e-9:
                raise DomainError(f"Points are not on the {self.lattice} lattice")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        """Return the number of points."""
        return self.coords.shape[0]

    def lattice_indices(self) -> np.ndarray:
        """Return the integer lattice coordinates of torus lattice points."""
        if self.lattice is None:
            raise DomainError("Point set is not a lattice subset")
        return np.rint(self.coords * self.lattice / TWO_PI).astype(np.int64) % (
            self.lattice
        )

    def prefix(self, count: int) -> "PointSet":
        """Return the first count points."""
        return PointSet(self.coords[:count], self.manifold, self.lattice)


@dataclass(frozen=True, slots=True)
class MeshStats:
    """Fill distance, separation distance and mesh ratio of a point set."""

    h: float
    q: float
    rho: float
    count: int
    probe_count: int
    # distance from any surface point to the nearest probe (accuracy of h)
    probe_spacing: float

    def as_dict(self) -> dict[str, Any]:
        """Return the statistics as a plain dict."""
        return {
            "h": self.h,
            "q": self.q,
            "rho": self.rho,
            "count": self.count,
            "probe_count": self.probe_count,
            "probe_spacing": self.probe_spacing,
        }


@dataclass(frozen=True)
class PointHierarchy:
    """Nested point sets with per-level mesh statistics."""

    levels: tuple[PointSet, ...]
    stats: tuple[MeshStats, ...]
    gamma_bounds: tuple[float, float] | None = None
    # sphere only: triangles of each level, used for quadrature
    faces: tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def manifold(self) -> ManifoldDescriptor:
        """Return the manifold of the hierarchy."""
        return self.levels[0].manifold

    @property
    def top(self) -> int:
        """Return the index of the finest level."""
        return len(self.levels) - 1

    def truncated(self, top: int) -> "PointHierarchy":
        """Return the hierarchy restricted to levels 0..top."""
        levels = self.levels[: top + 1]
        stats = self.stats[: top + 1]
        return PointHierarchy(
            levels, stats, _gamma_bounds(stats), self.faces[: top + 1]
        )

    def as_document(self) -> dict[str, Any]:
        """Return the JSON document of the hierarchy."""
        return {
            "manifold": self.manifold.kind,
            "levels": [level.coords for level in self.levels],
            "stats": [stats.as_dict() for stats in self.stats],
            "gamma_bounds": self.gamma_bounds,
        }


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and positive weights integrating over the whole surface."""

    nodes: PointSet
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> float:
        """Return the weighted sum of values at the nodes."""
        return float(self.weights @ values)


def _check_on_surface(manifold: ManifoldDescriptor, coords: np.ndarray) -> None:
    """Raise unless all coordinate rows lie on the surface."""
    if not np.all(np.isfinite(coords)):
        raise DomainError("Point coordinates must be finite")
    if manifold.kind == MANIFOLD_SPHERE:
        off = np.abs(np.linalg.norm(coords, axis=1) - 1.0)
        if np.any(off > SURFACE_TOLERANCE):
            raise DomainError(
                f"Point off the unit sphere by {float(np.max(off)):.3g}"
            )
    elif np.any(coords < 0.0) or np.any(coords >= TWO_PI):
        raise DomainError("Torus angles must lie in [0, 2pi)")


def _wrapped(delta: np.ndarray) -> np.ndarray:
    """Return per-coordinate torus distances min(|d|, 2pi - |d|)."""
    delta = np.abs(delta) % TWO_PI
    return np.minimum(delta, TWO_PI - delta)


def chord_to_geodesic(chord: np.ndarray) -> np.ndarray:
    """Convert sphere chord lengths to great circle distances."""
    return 2.0 * np.arcsin(np.clip(np.asarray(chord) / 2.0, 0.0, 1.0))


def pairwise_distances(
    manifold: ManifoldDescriptor, first: np.ndarray, second: np.ndarray
) -> np.ndarray:
    """Return the matrix of geodesic distances between two coordinate arrays."""
    first = np.atleast_2d(first)
    second = np.atleast_2d(second)
    if manifold.kind == MANIFOLD_SPHERE:
        return chord_to_geodesic(cdist(first, second))
    return np.hypot(
        _wrapped(first[:, None, 0] - second[None, :, 0]),
        _wrapped(first[:, None, 1] - second[None, :, 1]),
    )


def paired_distances(
    manifold: ManifoldDescriptor, first: np.ndarray, second: np.ndarray
) -> np.ndarray:
    """Return the geodesic distances between corresponding coordinate rows."""
    if manifold.kind == MANIFOLD_SPHERE:
        return chord_to_geodesic(np.sqrt(np.sum((first - second) ** 2, axis=1)))
    return np.hypot(
        _wrapped(first[:, 0] - second[:, 0]), _wrapped(first[:, 1] - second[:, 1])
    )


def geodesic_distance(
    manifold: ManifoldDescriptor, x: np.ndarray, y: np.ndarray
) -> float:
    """Return the geodesic distance between two surface points."""
    pair = np.array([x, y], dtype=np.float64)
    if pair.shape != (2, manifold.coordinate_dim):
        raise DomainError(f"Expected two {manifold.kind} points")
    _check_on_surface(manifold, pair)
    return float(pairwise_distances(manifold, pair[:1], pair[1:])[0, 0])


def neighbor_tree(points: PointSet) -> cKDTree:
    """Return a KD-tree whose Euclidean metric matches the surface metric locally."""
    if points.manifold.kind == MANIFOLD_TORUS:
        return cKDTree(points.coords, boxsize=TWO_PI)
    return cKDTree(points.coords)


def _nearest_distances(tree: cKDTree, manifold: ManifoldDescriptor, query, k: int):
    """Return geodesic distances of the k nearest tree points."""
    distances, _ = tree.query(query, k=k)
    if manifold.kind == MANIFOLD_SPHERE:
        return chord_to_geodesic(distances)
    return distances


def separation_distance(points: PointSet) -> float:
    """Return half the minimum pairwise distance of a point set."""
    if len(points) < 2:
        raise DomainError("Separation distance is undefined for a single point")
    nearest = _nearest_distances(
        neighbor_tree(points), points.manifold, points.coords, 2
    )
    q = float(np.min(nearest[:, 1])) / 2.0
    if q <= 0.0:
        raise DomainError("Point set contains duplicate points")
    return q


def probe_points(manifold: ManifoldDescriptor, probe_density: int) -> PointSet:
    """Return a dense quasi-uniform probe sample of the surface."""
    if probe_density < 1:
        raise DomainError("Probe density must be positive")
    if manifold.kind == MANIFOLD_TORUS:
        index = np.arange(probe_density)
        grid = np.stack(np.meshgrid(index, index, indexing="ij"), axis=-1)
        return PointSet(
            TWO_PI * grid.reshape(-1, 2) / probe_density, manifold, probe_density
        )
    count = probe_density * probe_density
    index = np.arange(count) + 0.5
    z = 1.0 - 2.0 * index / count
    radius = np.sqrt(1.0 - z * z)
    angle = math.pi * (1.0 + math.sqrt(5.0)) * index
    coords = np.column_stack((radius * np.cos(angle), radius * np.sin(angle), z))
    coords /= np.linalg.norm(coords, axis=1)[:, None]
    return PointSet(coords, manifold)


def _probe_spacing(manifold: ManifoldDescriptor, probe_density: int) -> float:
    """Return the covering radius of the probe sample."""
    if manifold.kind == MANIFOLD_TORUS:
        return TWO_PI / probe_density * math.sqrt(2.0) / 2.0
    return math.sqrt(manifold.volume / probe_density**2)


def mesh_norms(points: PointSet, probe_density: int) -> MeshStats:
    """Return h (probed), q (exact) and rho of a point set."""
    q = separation_distance(points)
    probes = probe_points(points.manifold, probe_density)
    nearest = _nearest_distances(
        neighbor_tree(points), points.manifold, probes.coords, 1
    )
    h = max(float(np.max(nearest)), q)
    return MeshStats(
        h=h,
        q=q,
        rho=h / q,
        count=len(points),
        probe_count=len(probes),
        probe_spacing=_probe_spacing(points.manifold, probe_density),
    )


def counting_bounds(
    manifold: ManifoldDescriptor, stats: MeshStats, slack: float = 4.0
) -> tuple[float, float]:
    """Return the point count window vol/beta h^-d .. vol/alpha q^-d plus slack."""
    alpha, beta = manifold.ball_constants
    lower = manifold.volume / beta * stats.h ** (-manifold.dim)
    upper = manifold.volume / alpha * stats.q ** (-manifold.dim)
    return lower / slack, upper * slack


def _torus_level(coarse: np.ndarray | None, n: int) -> np.ndarray:
    """Return the n x n grid ordered with the coarse points first."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    index = np.column_stack((i.ravel(), j.ravel()))
    if coarse is None:
        return TWO_PI * index / n
    fresh = index[(index[:, 0] % 2 == 1) | (index[:, 1] % 2 == 1)]
    return np.concatenate((coarse, TWO_PI * fresh / n))


def subdivide(
    vertices: np.ndarray, faces: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four, appending projected edge midpoints."""
    fresh: list[np.ndarray] = []
    midpoints: dict[tuple[int, int], int] = {}
    count = len(vertices)

    def midpoint(a: int, b: int) -> int:
        nonlocal count
        key = (min(a, b), max(a, b))
        if (index := midpoints.get(key)) is None:
            point = vertices[a] + vertices[b]
            fresh.append(point / np.linalg.norm(point))
            index = midpoints[key] = count
            count += 1
        return index

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces.extend(((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)))
    return np.concatenate((vertices, np.array(fresh))), np.array(new_faces)


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Return the unit icosahedron vertices and faces."""
    vertices = np.array(ICOSAHEDRON_VERTICES)
    vertices /= np.linalg.norm(vertices, axis=1)[:, None]
    return vertices, np.array(ICOSAHEDRON_FACES)


def _gamma_bounds(stats: tuple[MeshStats, ...]) -> tuple[float, float] | None:
    """Return the observed (min, max) fill distance refinement ratios."""
    if len(stats) < 2:
        return None
    ratios = [fine.h / coarse.h for coarse, fine in zip(stats, stats[1:], strict=False)]
    return min(ratios), max(ratios)


def hierarchy_size(manifold: ManifoldDescriptor, levels: int, base: int) -> int:
    """Return the number of points on the finest level."""
    if manifold.kind == MANIFOLD_TORUS:
        return (base * 2**levels) ** 2
    return 10 * 4 ** (base + levels) + 2


def build_hierarchy(
    manifold: ManifoldDescriptor,
    levels: int,
    base: int,
    *,
    probe_density: int = 128,
    rho_max: float = 3.0,
    max_points: int = MAX_POINTS,
) -> PointHierarchy:
    """Build nested point sets for levels 0..levels.

    Torus: level l is the n0 2^l square angular grid, n0 = base.
    Sphere: level l holds the vertices of the icosahedron subdivided
    base + l times.
    """
    if levels < 0:
        raise DomainError("Level count must be non-negative")
    if manifold.kind == MANIFOLD_TORUS and base < 2:
        raise DomainError("Torus hierarchies need at least 2 points per axis")
    if manifold.kind == MANIFOLD_SPHERE and base < 0:
        raise DomainError("Sphere base subdivision count must be non-negative")
    if (size := hierarchy_size(manifold, levels, base)) > max_points:
        raise CapacityError(f"Finest level would hold {size} > {max_points} points")

    point_sets: list[PointSet] = []
    faces: list[np.ndarray] = []
    if manifold.kind == MANIFOLD_TORUS:
        coords = None
        for level in range(levels + 1):
            n = base * 2**level
            coords = _torus_level(coords, n)
            point_sets.append(PointSet(coords, manifold, n))
    else:
        vertices, triangles = icosahedron()
        for _ in range(base):
            vertices, triangles = subdivide(vertices, triangles)
        for level in range(levels + 1):
            if level:
                vertices, triangles = subdivide(vertices, triangles)
            point_sets.append(PointSet(vertices, manifold))
            faces.append(triangles)

    stats = []
    for points in point_sets:
        if manifold.kind == MANIFOLD_TORUS:
            step = 2 * points.lattice
            density = max(step, -(-probe_density // step) * step)
        else:
            density = max(probe_density, math.ceil(16.0 * math.sqrt(len(points))))
        stats.append(mesh_norms(points, density))
        _LOGGER.debug("Level with %d points: %s", len(points), stats[-1])

    for level, level_stats in enumerate(stats):
        if level_stats.rho > rho_max:
            raise DomainError(
                f"Mesh ratio {level_stats.rho:.3f} on level {level} exceeds {rho_max}"
            )
    gamma = _gamma_bounds(tuple(stats))
    if gamma is not None and gamma[1] >= 1.0:
        raise DomainError(f"Fill distance does not decrease (ratio {gamma[1]:.3f})")
    return PointHierarchy(tuple(point_sets), tuple(stats), gamma, tuple(faces))


def torus_quadrature_level(nodes_per_axis: int) -> int:
    """Return the smallest accuracy level with at least that many nodes per axis."""
    level = 1
    while 8 * 2**level < nodes_per_axis:
        level += 1
    return level


def spherical_excess(
    a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Return the areas of spherical triangles with unit vertex rows a, b, c."""
    triple = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    denominator = (
        1.0
        + np.einsum("ij,ij->i", a, b)
        + np.einsum("ij,ij->i", b, c)
        + np.einsum("ij,ij->i", c, a)
    )
    return 2.0 * np.arctan2(triple, denominator)


def build_quadrature(
    manifold: ManifoldDescriptor, accuracy_level: int
) -> QuadratureRule:
    """Build a positive quadrature rule of the given accuracy level.

    Torus: trapezoidal rule on an M x M grid with M = 8 * 2^level.
    Sphere: centroid rule on the icosahedron subdivided level times,
    weighted by spherical triangle areas.
    """
    if accuracy_level < 1:
        raise DomainError("Quadrature accuracy level must be at least 1")
    if manifold.kind == MANIFOLD_TORUS:
        size = 8 * 2**accuracy_level
        if size * size > 64 * MAX_POINTS:
            raise CapacityError(f"Quadrature grid {size} x {size} is too large")
        nodes = probe_points(manifold, size)
        weights = np.full(len(nodes), (TWO_PI / size) ** 2)
        return QuadratureRule(nodes, weights)

    if 20 * 4**accuracy_level > 64 * MAX_POINTS:
        raise CapacityError(f"Quadrature level {accuracy_level} is too large")
    vertices, faces = icosahedron()
    for _ in range(accuracy_level):
        vertices, faces = subdivide(vertices, faces)
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    centroids = a + b + c
    centroids /= np.linalg.norm(centroids, axis=1)[:, None]
    return QuadratureRule(PointSet(centroids, manifold), spherical_excess(a, b, c))
