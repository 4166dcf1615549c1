"""Damped Jacobi smoothing, two-grid and tau-cycle multigrid solvers."""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
import logging
import math
from pathlib import Path
from typing import Any, NamedTuple
import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.sparse import csc_array
from scipy.sparse.linalg import splu
from scipy.stats import linregress

from .assembly import (
    EllipticOperator,
    LevelSystem,
    TransferPair,
    assemble_stiffness,
    build_prolongation,
    select_damping,
)
from .const import (
    ASYMPTOTIC_WINDOW,
    CONF_EPS_MAX,
    CONF_GAMMA_TARGET,
    CONF_MAX_ITERS,
    CONF_NU1,
    CONF_NU2,
    CONF_TAU,
    CONF_TRUNCATION,
    CONF_TWO_GRID,
    EXPLICIT_LIMIT,
    OUTSIDE_THEORY,
    MgOptions,
    StackMode,
)
from .exceptions import CapacityError, ConditioningError, DimensionError, DomainError
from .geometry import PointHierarchy
from .kernelspace import (
    LagrangeBasis,
    SpectralKernel,
    compute_lagrange,
    load_basis_cache,
    save_basis_cache,
)
from .matrices import FlopLedger, Matrix, SparseMatrix, dense, matvec, stored_entries

_LOGGER = logging.getLogger(__name__)

# residual growth treated as divergence by solve
_DIVERGENCE = 1e100


@dataclass(frozen=True, slots=True)
class MgConfig:
    """Cycle exponent, smoothing steps and stopping rule of the solver."""

    tau: int = 2
    nu1: int = 4
    nu2: int = 4
    eps_max: float = 1e-8
    max_iters: int = 100
    gamma_target: float = 0.5
    truncation: float | None = None
    # error_propagation_matrix builds T instead of M
    two_grid: bool = False

    def __post_init__(self) -> None:
        """Validate the cycle parameters."""
        if self.tau < 1:
            raise DomainError(f"Cycle exponent tau must be >= 1, got {self.tau}")
        if self.nu1 < 1 or self.nu2 < 0:
            raise DomainError("Need nu1 >= 1 pre- and nu2 >= 0 post-smoothing steps")
        if not 0.0 < self.gamma_target < 1.0:
            raise DomainError("Target contraction must lie in (0, 1)")
        if self.eps_max <= 0.0 or self.max_iters < 0:
            raise DomainError("Stopping tolerance must be positive")

    @classmethod
    def from_options(cls, options: MgOptions) -> "MgConfig":
        """Create from the mg section of a study config."""
        return cls(
            tau=options[CONF_TAU],
            nu1=options[CONF_NU1],
            nu2=options[CONF_NU2],
            eps_max=options[CONF_EPS_MAX],
            max_iters=options[CONF_MAX_ITERS],
            gamma_target=options[CONF_GAMMA_TARGET],
            truncation=options[CONF_TRUNCATION],
            two_grid=options[CONF_TWO_GRID],
        )

    @property
    def outside_theory(self) -> bool:
        """Return True for cycles the convergence theory does not cover."""
        return self.tau < 2

    def with_smoothing(self, nu: int) -> "MgConfig":
        """Return a copy with nu pre- and post-smoothing steps."""
        return replace(self, nu1=nu, nu2=nu)


@dataclass(frozen=True, eq=False)
class LevelStack:
    """Level systems 0..L with the transfers between consecutive levels."""

    systems: tuple[LevelSystem, ...]
    # transfers[l - 1] maps level l - 1 to level l
    transfers: tuple[TransferPair, ...]
    mode: StackMode = StackMode.DENSE
    hierarchy: PointHierarchy | None = None
    bases: tuple[LagrangeBasis, ...] = ()
    _solvers: dict[int, Any] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        """Check the matrix dimensions level by level."""
        if not self.systems:
            raise DimensionError("A level stack needs at least one level")
        if len(self.transfers) != len(self.systems) - 1:
            raise DimensionError("Need one transfer pair per level above the coarsest")
        for level, system in enumerate(self.systems):
            if system.A.shape != (system.size, system.size):
                raise DimensionError(f"Stiffness matrix on level {level} is not square")
            if system.theta is None:
                raise DomainError(f"Level {level} has no damping parameter")
        for level, pair in enumerate(self.transfers, start=1):
            fine, coarse = self.systems[level].size, self.systems[level - 1].size
            if pair.P.shape != (fine, coarse) or pair.R.shape != (coarse, fine):
                raise DimensionError(
                    f"Transfers on level {level} do not map {coarse} to {fine} unknowns"
                )

    @property
    def top(self) -> int:
        """Return the index of the finest level."""
        return len(self.systems) - 1

    def size(self, level: int) -> int:
        """Return the number of unknowns on a level."""
        return self.systems[level].size

    def transfer(self, level: int) -> TransferPair:
        """Return the transfer pair between level - 1 and level."""
        if not 1 <= level <= self.top:
            raise DomainError(f"No transfers into level {level}")
        return self.transfers[level - 1]

    def restricted(self, top: int) -> "LevelStack":
        """Return the stack restricted to levels 0..top."""
        if not 0 <= top <= self.top:
            raise DomainError(f"Level {top} is not part of the stack")
        return LevelStack(
            self.systems[: top + 1],
            self.transfers[:top],
            self.mode,
            None if self.hierarchy is None else self.hierarchy.truncated(top),
            self.bases[: top + 1],
        )

    def _solver(self, level: int) -> tuple[Any, int]:
        """Return the cached factorization of A on a level and its solve cost."""
        if (cached := self._solvers.get(level)) is not None:
            return cached
        matrix = self.systems[level].A
        if isinstance(matrix, SparseMatrix):
            try:
                solver = splu(csc_array(matrix.matrix))
            except RuntimeError as err:
                raise ConditioningError(
                    f"Sparse factorization of level {level} failed: {err}"
                ) from err
            cost = 2 * (solver.L.nnz + solver.U.nnz)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("error", LinAlgWarning)
                try:
                    factors = lu_factor(dense(matrix))
                except LinAlgWarning as err:
                    raise ConditioningError(
                        f"Stiffness matrix on level {level} is singular to working"
                        " precision"
                    ) from err
            pivots = np.abs(np.diag(factors[0]))
            if np.any(pivots == 0.0):
                raise ConditioningError(
                    f"Stiffness matrix on level {level} is singular",
                    smallest_pivot=float(pivots.min()),
                )
            solver, cost = factors, 2 * matrix.shape[0] ** 2
        self._solvers[level] = (solver, cost)
        return self._solvers[level]

    def solve_cost(self, level: int) -> int:
        """Return the ledger count of one direct solve on a level."""
        return self._solver(level)[1]

    def coarse_solve(
        self, level: int, rhs: np.ndarray, ledger: FlopLedger | None = None
    ) -> np.ndarray:
        """Return A_level^-1 rhs by a factorization computed once per level."""
        solver, cost = self._solver(level)
        if rhs.shape[0] != self.size(level):
            raise DimensionError(
                f"Level {level} has {self.size(level)} unknowns, got {rhs.shape[0]}"
            )
        if ledger is not None:
            ledger.add(cost * (1 if rhs.ndim == 1 else rhs.shape[1]))
        if isinstance(solver, tuple):
            return lu_solve(solver, rhs)
        return solver.solve(rhs)


@dataclass(slots=True)
class SolveReport:
    """Iteration history of one multigrid solve."""

    iterations: int
    residual_history: list[float]
    contraction_history: list[float]
    asymptotic_contraction: float | None
    flops: int
    converged: bool
    annotations: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        """Return the report as a JSON compatible dict."""
        return {
            "iterations": self.iterations,
            "residual_history": self.residual_history,
            "contraction_history": self.contraction_history,
            "asymptotic_contraction": self.asymptotic_contraction,
            "flops": self.flops,
            "converged": self.converged,
            "annotations": self.annotations,
        }


# ---------------------------------------------------------------------------
# stack construction
# ---------------------------------------------------------------------------


def stack_kernel(hierarchy: PointHierarchy, m: int, tolerance: float) -> SpectralKernel:
    """Return the kernel shared by all levels, resolved for the finest level."""
    finest = hierarchy.stats[-1]
    return SpectralKernel.create(hierarchy.manifold, m, finest.h, tolerance)


def _cache_file(directory: Path, level: int) -> Path:
    """Return the basis cache file of a level."""
    return directory / f"level{level}.lagb"


def build_bases(
    hierarchy: PointHierarchy,
    kernel: SpectralKernel,
    basis_cache: Path | None = None,
) -> tuple[LagrangeBasis, ...]:
    """Compute the Lagrange bases of all levels, reusing cached coefficients."""
    bases = []
    for level, points in enumerate(hierarchy.levels):
        cached = None
        if basis_cache is not None:
            cached = load_basis_cache(
                _cache_file(basis_cache, level), kernel, len(points)
            )
        basis = compute_lagrange(kernel, points, level, coefficients=cached)
        if basis_cache is not None and cached is None:
            save_basis_cache(_cache_file(basis_cache, level), basis)
        bases.append(basis)
    return tuple(bases)


def build_stack(
    hierarchy: PointHierarchy,
    kernel: SpectralKernel,
    op: EllipticOperator,
    *,
    seed: int = 0,
    basis_cache: Path | None = None,
) -> LevelStack:
    """Assemble stiffness matrices, damping and transfers on every level."""
    bases = build_bases(hierarchy, kernel, basis_cache)
    systems = []
    for basis in bases:
        system = assemble_stiffness(basis, op)
        systems.append(
            system.with_damping(select_damping(system, seed=seed + basis.level))
        )
    transfers = tuple(
        build_prolongation(bases[level - 1], hierarchy.levels[level])
        for level in range(1, len(bases))
    )
    _LOGGER.debug(
        "Assembled %d levels with sizes %s", len(systems), [s.size for s in systems]
    )
    return LevelStack(tuple(systems), transfers, StackMode.DENSE, hierarchy, bases)


# ---------------------------------------------------------------------------
# smoother and cycles
# ---------------------------------------------------------------------------


def _diagonal_scaling(system: LevelSystem, vector: np.ndarray) -> np.ndarray:
    """Return theta B^-1 broadcast against one or several vectors."""
    scale = system.theta / system.B
    return scale if vector.ndim == 1 else scale[:, None]


def jacobi_step(
    system: LevelSystem,
    u: np.ndarray,
    b: np.ndarray | None = None,
    ledger: FlopLedger | None = None,
) -> np.ndarray:
    """Return (id - theta B^-1 A) u + theta B^-1 b."""
    if u.shape[0] != system.size or (b is not None and b.shape != u.shape):
        raise DimensionError(
            f"Level {system.level} has {system.size} unknowns, got {u.shape[0]}"
        )
    residual = -matvec(system.A, u, ledger)
    if b is not None:
        residual += b
    return u + _diagonal_scaling(system, u) * residual


def _smooth(
    system: LevelSystem,
    u: np.ndarray,
    b: np.ndarray,
    steps: int,
    ledger: FlopLedger | None,
) -> np.ndarray:
    for _ in range(steps):
        u = jacobi_step(system, u, b, ledger)
    return u


def _coarse_residual(
    stack: LevelStack,
    level: int,
    u: np.ndarray,
    b: np.ndarray,
    ledger: FlopLedger | None,
) -> np.ndarray:
    """Return R (b - A u)."""
    residual = b - matvec(stack.systems[level].A, u, ledger)
    return matvec(stack.transfer(level).R, residual, ledger)


def _check_level(stack: LevelStack, level: int, u: np.ndarray, b: np.ndarray) -> None:
    if not 0 <= level <= stack.top:
        raise DomainError(f"Level {level} is not part of the stack")
    if u.shape[0] != stack.size(level) or b.shape != u.shape:
        raise DimensionError(
            f"Level {level} has {stack.size(level)} unknowns, got {u.shape} and"
            f" {b.shape}"
        )


def tgm(
    stack: LevelStack,
    level: int,
    u_old: np.ndarray,
    b: np.ndarray,
    cfg: MgConfig,
    ledger: FlopLedger | None = None,
) -> np.ndarray:
    """Run one two-grid iteration with an exact solve on level - 1."""
    _check_level(stack, level, u_old, b)
    if level == 0:
        return stack.coarse_solve(0, b, ledger)
    system = stack.systems[level]
    u = _smooth(system, u_old, b, cfg.nu1, ledger)
    correction = stack.coarse_solve(
        level - 1, _coarse_residual(stack, level, u, b, ledger), ledger
    )
    u = u + matvec(stack.transfer(level).P, correction, ledger)
    return _smooth(system, u, b, cfg.nu2, ledger)


def mgm(
    stack: LevelStack,
    level: int,
    u_old: np.ndarray,
    b: np.ndarray,
    cfg: MgConfig,
    ledger: FlopLedger | None = None,
) -> np.ndarray:
    """Run one tau-cycle, recursing tau times into level - 1 from a zero start."""
    _check_level(stack, level, u_old, b)
    if level == 0:
        return stack.coarse_solve(0, b, ledger)
    system = stack.systems[level]
    u = _smooth(system, u_old, b, cfg.nu1, ledger)
    defect = _coarse_residual(stack, level, u, b, ledger)
    correction = np.zeros_like(defect)
    for _ in range(cfg.tau):
        correction = mgm(stack, level - 1, correction, defect, cfg, ledger)
    u = u + matvec(stack.transfer(level).P, correction, ledger)
    return _smooth(system, u, b, cfg.nu2, ledger)


def _geometric_mean(ratios: Sequence[float]) -> float | None:
    """Return the geometric mean of the trailing contraction ratios."""
    window = list(ratios[-ASYMPTOTIC_WINDOW:])
    if not window:
        return None
    if min(window) <= 0.0:
        return 0.0
    return float(math.exp(sum(math.log(ratio) for ratio in window) / len(window)))


def solve(
    stack: LevelStack,
    b: np.ndarray,
    cfg: MgConfig,
    u0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Iterate tau-cycles on the finest level until the residual is small.

    The stopping rule is relative to ||b||; for b = 0 the residual itself is
    compared with eps_max.
    """
    top = stack.top
    matrix = stack.systems[top].A
    u = np.zeros(stack.size(top)) if u0 is None else np.array(u0, dtype=np.float64)
    _check_level(stack, top, u, b)
    annotations = [OUTSIDE_THEORY] if cfg.outside_theory else []
    if cfg.outside_theory:
        _LOGGER.warning("Cycle exponent tau=%d is %s", cfg.tau, OUTSIDE_THEORY)

    ledger = FlopLedger()
    scale = float(np.linalg.norm(b)) or 1.0
    residuals = [float(np.linalg.norm(b - matvec(matrix, u)))]
    ratios: list[float] = []
    converged = residuals[0] <= cfg.eps_max * scale
    while not converged and len(ratios) < cfg.max_iters:
        u = mgm(stack, top, u, b, cfg, ledger)
        residuals.append(float(np.linalg.norm(b - matvec(matrix, u))))
        ratios.append(residuals[-1] / residuals[-2] if residuals[-2] else 0.0)
        if not math.isfinite(residuals[-1]) or residuals[-1] > _DIVERGENCE * scale:
            _LOGGER.warning("Multigrid iteration diverged after %d steps", len(ratios))
            break
        converged = residuals[-1] <= cfg.eps_max * scale
    if not converged:
        _LOGGER.warning(
            "No convergence to %.1e within %d iterations (residual %.3e)",
            cfg.eps_max,
            len(ratios),
            residuals[-1] / scale,
        )
    report = SolveReport(
        iterations=len(ratios),
        residual_history=residuals,
        contraction_history=ratios,
        asymptotic_contraction=_geometric_mean(ratios),
        flops=ledger.multiply_adds,
        converged=converged,
        annotations=annotations,
    )
    return u, report


def predicted_iterations(gamma: float, eps: float, e0: float) -> int:
    """Return ceil(log(eps / e0) / log(gamma)), the iterations a contraction needs."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"Contraction {gamma} does not lie in (0, 1)")
    if eps <= 0.0:
        raise DomainError("Target accuracy must be positive")
    if e0 <= eps:
        return 0
    return math.ceil(math.log(eps / e0) / math.log(gamma))


# ---------------------------------------------------------------------------
# iteration matrices
# ---------------------------------------------------------------------------


def _check_explicit(stack: LevelStack, level: int, limit: int) -> int:
    if not 0 <= level <= stack.top:
        raise DomainError(f"Level {level} is not part of the stack")
    if (size := stack.size(level)) > limit:
        raise CapacityError(f"Level {level} has {size} > {limit} unknowns")
    return size


def error_propagation_matrix(
    stack: LevelStack,
    level: int,
    cfg: MgConfig,
    limit: int = EXPLICIT_LIMIT,
) -> np.ndarray:
    """Return T (two-grid) or M (tau-cycle) by applying one b = 0 cycle to id."""
    size = _check_explicit(stack, level, limit)
    if level == 0:
        return np.zeros((size, size))
    cycle = tgm if cfg.two_grid else mgm
    return cycle(stack, level, np.eye(size), np.zeros((size, size)), cfg)


def smoothing_matrix(system: LevelSystem) -> np.ndarray:
    """Return W = id - theta B^-1 A."""
    return np.eye(system.size) - (system.theta / system.B)[:, None] * dense(system.A)


def _coarse_inverse(stack: LevelStack, level: int) -> np.ndarray:
    return stack.coarse_solve(level, np.eye(stack.size(level)))


def two_grid_matrix(
    stack: LevelStack, level: int, cfg: MgConfig, limit: int = EXPLICIT_LIMIT
) -> np.ndarray:
    """Return T = W^nu2 (id - P A_c^-1 R A) W^nu1 built from its factors."""
    size = _check_explicit(stack, level, limit)
    if level == 0:
        return np.zeros((size, size))
    system = stack.systems[level]
    pair = stack.transfer(level)
    smoother = smoothing_matrix(system)
    correction = np.eye(size) - dense(pair.P) @ _coarse_inverse(stack, level - 1) @ (
        dense(pair.R) @ dense(system.A)
    )
    return (
        np.linalg.matrix_power(smoother, cfg.nu2)
        @ correction
        @ np.linalg.matrix_power(smoother, cfg.nu1)
    )


def recursive_iteration_matrix(
    stack: LevelStack, level: int, cfg: MgConfig, limit: int = EXPLICIT_LIMIT
) -> np.ndarray:
    """Return M_l = T_l + W^nu2 P M_(l-1)^tau A_(l-1)^-1 R A W^nu1 with M_0 = 0."""
    size = _check_explicit(stack, level, limit)
    if level == 0:
        return np.zeros((size, size))
    system = stack.systems[level]
    pair = stack.transfer(level)
    smoother = smoothing_matrix(system)
    coarse = recursive_iteration_matrix(stack, level - 1, cfg, limit)
    inner = (
        dense(pair.P)
        @ np.linalg.matrix_power(coarse, cfg.tau)
        @ _coarse_inverse(stack, level - 1)
        @ dense(pair.R)
        @ dense(system.A)
    )
    return two_grid_matrix(stack, level, cfg, limit) + (
        np.linalg.matrix_power(smoother, cfg.nu2)
        @ inner
        @ np.linalg.matrix_power(smoother, cfg.nu1)
    )


# ---------------------------------------------------------------------------
# contraction measurements
# ---------------------------------------------------------------------------


class ContractionMeasurement(NamedTuple):
    """Asymptotic contraction of one level and how it was measured."""

    value: float
    method: str


def measure_contraction(
    stack: LevelStack,
    level: int,
    cfg: MgConfig,
    *,
    explicit_limit: int = EXPLICIT_LIMIT,
    seed: int = 0,
    iterations: int = 30,
) -> ContractionMeasurement:
    """Return the spectral radius of the iteration matrix, or residual ratios.

    Small levels use the explicit matrix; larger ones the geometric mean of
    the last error reduction ratios of a b = 0 iteration from a random start.
    """
    if level == 0:
        return ContractionMeasurement(0.0, "direct")
    size = stack.size(level)
    if size <= explicit_limit:
        matrix = error_propagation_matrix(stack, level, cfg, explicit_limit)
        radius = float(np.max(np.abs(np.linalg.eigvals(matrix))))
        return ContractionMeasurement(radius, "spectral_radius")
    cycle = tgm if cfg.two_grid else mgm
    rng = np.random.default_rng(seed)
    error = rng.standard_normal(size)
    zero = np.zeros(size)
    ratios: list[float] = []
    norm = float(np.linalg.norm(error))
    for _ in range(iterations):
        error = cycle(stack, level, error, zero, cfg)
        previous, norm = norm, float(np.linalg.norm(error))
        ratios.append(norm / previous)
        if norm < 1e-250 or not math.isfinite(norm):
            break
    return ContractionMeasurement(_geometric_mean(ratios) or 0.0, "residual_ratio")


@dataclass(slots=True)
class SmoothingSweep:
    """Contraction per level and smoothing count, with the smallest good count."""

    rows: list[dict[str, Any]]
    nu_star: int | None


def nu_sweep(
    stack: LevelStack,
    cfg: MgConfig,
    nus: Iterable[int],
    *,
    explicit_limit: int = EXPLICIT_LIMIT,
    seed: int = 0,
) -> SmoothingSweep:
    """Measure the contraction of levels 1..L for nu1 = nu2 = nu.

    nu_star is the smallest nu whose contraction is below gamma_target on
    every level.
    """
    rows: list[dict[str, Any]] = []
    nu_star = None
    for nu in sorted(set(nus)):
        swept = cfg.with_smoothing(nu)
        worst = 0.0
        for level in range(1, stack.top + 1):
            measured = measure_contraction(
                stack, level, swept, explicit_limit=explicit_limit, seed=seed
            )
            worst = max(worst, measured.value)
            rows.append(
                {
                    "level": level,
                    "N": stack.size(level),
                    "nu1": nu,
                    "nu2": nu,
                    "tau": cfg.tau,
                    "contraction": measured.value,
                    "method": measured.method,
                    "outside_theory": cfg.outside_theory,
                }
            )
        _LOGGER.info("nu=%d: worst contraction %.4f", nu, worst)
        if nu_star is None and worst <= cfg.gamma_target:
            nu_star = nu
    return SmoothingSweep(rows, nu_star)


class SmoothingProfile(NamedTuple):
    """Norms ||A W^n|| and the B-weighted norm of W on one level."""

    steps: tuple[int, ...]
    norms: tuple[float, ...]
    nonexpansive_norm: float
    exponent: float
    # max_n (n + 1) ||A W^n|| relative to its value at the first step count
    scaled_ratio: float


def smoothing_profile(
    system: LevelSystem, steps: Iterable[int] = range(1, 65)
) -> SmoothingProfile:
    """Measure the smoothing property of damped Jacobi on one level."""
    steps = tuple(sorted(set(steps)))
    if not steps or steps[0] < 1:
        raise DomainError("Smoothing steps must be positive")
    smoother = smoothing_matrix(system)
    stiffness = dense(system.A)
    root = np.sqrt(system.B)
    weighted = float(np.linalg.norm(root[:, None] * smoother / root[None, :], 2))
    norms = []
    power, current = np.linalg.matrix_power(smoother, steps[0]), steps[0]
    for n in steps:
        power = power @ np.linalg.matrix_power(smoother, n - current)
        current = n
        norms.append(float(np.linalg.norm(stiffness @ power, 2)))
    scaled = [(n + 1) * norm for n, norm in zip(steps, norms, strict=True)]
    exponent = (
        float(linregress(np.log(steps), np.log(norms)).slope)
        if len(steps) > 1
        else 0.0
    )
    return SmoothingProfile(
        steps, tuple(norms), weighted, exponent, max(scaled) / scaled[0]
    )


def two_grid_norm_sweep(
    stack: LevelStack,
    level: int,
    cfg: MgConfig,
    nus: Iterable[int] = (1, 2, 4, 8, 16),
) -> tuple[dict[int, float], float]:
    """Return ||T_level|| for pre-smoothing counts nus and the log-log slope."""
    nus = sorted(set(nus))
    norms = {}
    for nu in nus:
        matrix = two_grid_matrix(stack, level, replace(cfg, nu1=nu, nu2=0))
        norms[nu] = float(np.linalg.norm(matrix, 2))
    if len(nus) < 2:
        return norms, 0.0
    fit = linregress(np.log(nus), np.log([norms[nu] for nu in nus]))
    return norms, float(fit.slope)


def flop_recursion(stack: LevelStack, cfg: MgConfig) -> list[int]:
    """Return the predicted ledger count of one tau-cycle started on each level.

    M_0 is the coarse solve, M_l = (nu1 + nu2 + 1) a_l + p_l + r_l + tau M_(l-1)
    with a, p and r the costs of one product with A, P and R.
    """
    costs = [stack.solve_cost(0)]
    for level in range(1, stack.top + 1):
        pair = stack.transfer(level)
        costs.append(
            (cfg.nu1 + cfg.nu2 + 1) * 2 * stored_entries(stack.systems[level].A)
            + 2 * stored_entries(pair.P)
            + 2 * stored_entries(pair.R)
            + cfg.tau * costs[-1]
        )
    return costs


# ---------------------------------------------------------------------------
# perturbed stacks
# ---------------------------------------------------------------------------


def _scaled_noise(
    rng: np.random.Generator, shape: tuple[int, int], eps: float, symmetric: bool
) -> np.ndarray:
    """Return a Gaussian matrix with spectral norm eps."""
    noise = rng.standard_normal(shape)
    if symmetric:
        noise = (noise + noise.T) / 2.0
    return noise * (eps / np.linalg.norm(noise, 2))


def perturb_stack(
    stack: LevelStack, eps_schedule: Sequence[float], seed: int = 0
) -> LevelStack:
    """Add seeded perturbations of spectral norm eps_l to A, P and R of level l.

    The diagonal B and theta are recomputed from the perturbed A. Levels with
    eps_l = 0 keep their matrices.
    """
    if len(eps_schedule) != len(stack.systems):
        raise DimensionError(
            f"Need {len(stack.systems)} perturbation sizes, got {len(eps_schedule)}"
        )
    if any(eps < 0.0 for eps in eps_schedule):
        raise DomainError("Perturbation sizes must be non-negative")
    if not any(eps_schedule):
        return stack
    rng = np.random.default_rng(seed)
    systems = []
    transfers = []
    pairs = zip(stack.systems, eps_schedule, strict=True)
    for level, (system, eps) in enumerate(pairs):
        if eps == 0.0:
            systems.append(system)
            if level:
                transfers.append(stack.transfer(level))
            continue
        matrix = dense(system.A)
        perturbed = system.with_matrix(
            matrix + _scaled_noise(rng, matrix.shape, eps, system.symmetric)
        )
        systems.append(
            perturbed.with_damping(select_damping(perturbed, seed=seed + level))
        )
        if level:
            pair = stack.transfer(level)
            prolongation, restriction = dense(pair.P), dense(pair.R)
            transfers.append(
                TransferPair(
                    prolongation + _scaled_noise(rng, prolongation.shape, eps, False),
                    restriction + _scaled_noise(rng, restriction.shape, eps, False),
                )
            )
    _LOGGER.debug("Perturbed stack with sizes %s", list(eps_schedule))
    return LevelStack(
        tuple(systems),
        tuple(transfers),
        StackMode.PERTURBED,
        stack.hierarchy,
        stack.bases,
    )


# ---------------------------------------------------------------------------
# recursion lemma
# ---------------------------------------------------------------------------


class RecursionCheck(NamedTuple):
    """Outcome of iterating x_(n+1) = alpha + beta x_n^tau from x_0 = 0."""

    holds: bool
    trajectory_max: float
    hypotheses_hold: bool
    violations: tuple[str, ...]


def recursive_bound_check(
    alpha: float,
    beta: float,
    tau: int,
    gamma: float,
    n_steps: int = 10_000,
) -> RecursionCheck:
    """Check whether the recursion stays below gamma and report unmet hypotheses."""
    violations = []
    if tau < 2:
        violations.append(f"tau={tau} < 2")
    if not 0.0 < gamma < 1.0:
        violations.append(f"gamma={gamma} outside (0, 1)")
    if beta <= 1.0 / max(tau, 1):
        violations.append(f"beta={beta} <= 1/tau")
    if alpha < 0.0:
        violations.append(f"alpha={alpha} < 0")
    elif tau >= 2 and beta > 0.0:
        ratio = (tau - 1) / tau
        limit = min(ratio * (beta * tau) ** (-1.0 / (tau - 1)), ratio * gamma)
        if alpha >= limit:
            violations.append(f"alpha={alpha} >= {limit:.6g}")

    value = 0.0
    trajectory_max = 0.0
    for _ in range(n_steps):
        try:
            value = alpha + beta * value**tau
        except OverflowError:
            value = math.inf
        if not math.isfinite(value):
            trajectory_max = math.inf
            break
        trajectory_max = max(trajectory_max, value)
    return RecursionCheck(
        trajectory_max <= gamma, trajectory_max, not violations, tuple(violations)
    )
