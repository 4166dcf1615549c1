"""Constants for the kernel multigrid solver."""

from enum import StrEnum
import math
from typing import TypedDict

TWO_PI: float = 2.0 * math.pi

MANIFOLD_SPHERE: str = "sphere"
MANIFOLD_TORUS: str = "torus"

# manifold tags in the binary basis cache header
MANIFOLD_TAGS: dict[str, int] = {MANIFOLD_TORUS: 1, MANIFOLD_SPHERE: 2}

CONF_MANIFOLD: str = "manifold"
CONF_SEED: str = "seed"
CONF_KERNEL: str = "kernel"
CONF_OPERATOR: str = "operator"
CONF_HIERARCHY: str = "hierarchy"
CONF_MG: str = "mg"
CONF_STUDY: str = "study"
CONF_OUTPUT: str = "output"
CONF_THRESHOLDS: str = "thresholds"

CONF_M: str = "m"
CONF_SERIES_TAIL_TOLERANCE: str = "series_tail_tolerance"
CONF_C: str = "c"
CONF_C_MIN: str = "c_min"
CONF_ADVECTION: str = "advection"
CONF_LEVELS: str = "levels"
CONF_BASE: str = "base"
CONF_RHO_MAX: str = "rho_max"
CONF_PROBE_DENSITY: str = "probe_density"
CONF_TAU: str = "tau"
CONF_NU1: str = "nu1"
CONF_NU2: str = "nu2"
CONF_EPS_MAX: str = "eps_max"
CONF_MAX_ITERS: str = "max_iters"
CONF_GAMMA_TARGET: str = "gamma_target"
CONF_TRUNCATION: str = "truncation"
CONF_TWO_GRID: str = "two_grid"
CONF_KIND: str = "kind"
CONF_NU_SWEEP: str = "nu_sweep"
CONF_TRUNCATION_SWEEP: str = "truncation_sweep"
CONF_EXPLICIT_LIMIT: str = "explicit_limit"
CONF_MIN_LEVEL: str = "min_level"
CONF_CONVERGENCE_EPS: str = "convergence_eps"
CONF_COMPLEXITY_EPS: str = "complexity_eps"
CONF_RHS: str = "rhs"
CONF_DIRECTORY: str = "directory"
CONF_PREFIX: str = "prefix"

STUDY_CONTRACTION: str = "contraction"
STUDY_CONVERGENCE: str = "convergence"
STUDY_COMPLEXITY: str = "complexity"
STUDY_PROPERTIES: str = "properties"
STUDY_KINDS: tuple[str, ...] = (
    STUDY_CONTRACTION,
    STUDY_CONVERGENCE,
    STUDY_COMPLEXITY,
    STUDY_PROPERTIES,
)

RHS_ZERO: str = "zero"
RHS_RANDOM: str = "random"
RHS_MANUFACTURED: str = "manufactured"

# numerical tolerances that are not study thresholds
SURFACE_TOLERANCE: float = 1e-12
CARDINALITY_TOLERANCE: float = 1e-8
SERIES_TAIL_TOLERANCE: float = 1e-12
POWER_ITERATION_STEPS: int = 100
POWER_ITERATION_TOLERANCE: float = 1e-6
DAMPING_SAFETY: float = 0.9
DAMPING_FALLBACK_SAFETY: float = 0.8
EXPLICIT_LIMIT: int = 3000
CONDITION_DENSE_LIMIT: int = 2048
CONDITION_TOLERANCE: float = 1e-4
MAX_POINTS: int = 20000
DECAY_FLOOR: float = 1e-12
DECAY_MIN_SAMPLES: int = 8
ASYMPTOTIC_WINDOW: int = 5

TORUS_MIN_CUTOFF: int = 32
SPHERE_MIN_CUTOFF: int = 64

OUTSIDE_THEORY: str = "outside theory"


class StackMode(StrEnum):
    """Storage and provenance of the matrices in a level stack."""

    DENSE = "dense"
    TRUNCATED = "truncated"
    PERTURBED = "perturbed"


class KernelOptions(TypedDict):
    """Type containing the kernel options."""

    m: int
    # relative size of the dropped eigen-series tail of phi(x, x)
    series_tail_tolerance: float


class OperatorOptions(TypedDict):
    """Type containing the elliptic operator options."""

    c: float
    c_min: float
    # constant advection vector, torus only
    advection: list[float] | None


class HierarchyOptions(TypedDict):
    """Type containing the point hierarchy options."""

    levels: int
    # torus: grid points per axis on level 0; sphere: icosahedron subdivisions
    base: int
    rho_max: float
    probe_density: int


class MgOptions(TypedDict):
    """Type containing the multigrid options."""

    tau: int
    nu1: int
    nu2: int
    eps_max: float
    max_iters: int
    gamma_target: float
    truncation: float | None
    two_grid: bool


class StudyOptions(TypedDict):
    """Type containing the study options."""

    kind: str
    nu_sweep: list[int]
    truncation_sweep: list[float]
    explicit_limit: int
    min_level: int
    convergence_eps: float
    complexity_eps: float
    rhs: str


class OutputOptions(TypedDict):
    """Type containing the output options."""

    directory: str
    prefix: str


class Thresholds(TypedDict):
    """Type containing the pass/fail thresholds of the studies."""

    contraction_spread: float
    kappa_ratio_min: float
    kappa_ratio_max: float
    min_order: float
    iteration_spread: int
    cg_growth: float
    complexity_band: float
    riesz_band: float
    diag_ratio_band: float
    decay_r_squared: float
    smoothing_band: float
    scaled_norm_band: float
    cardinality: float
    quadrature_change: float


class StudyConfig(TypedDict):
    """Type containing a validated study configuration document."""

    manifold: str
    seed: int
    kernel: KernelOptions
    operator: OperatorOptions
    hierarchy: HierarchyOptions
    mg: MgOptions
    study: StudyOptions
    output: OutputOptions
    thresholds: Thresholds
