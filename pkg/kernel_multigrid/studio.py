"""Conditioning, contraction, convergence and complexity studies."""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from scipy.sparse.linalg import cg

from .assembly import EllipticOperator, assemble_load, check_damping, stiffness_decay
from .const import (
    CONF_ADVECTION,
    CONF_BASE,
    CONF_C,
    CONF_C_MIN,
    CONF_COMPLEXITY_EPS,
    CONF_CONVERGENCE_EPS,
    CONF_EXPLICIT_LIMIT,
    CONF_HIERARCHY,
    CONF_KERNEL,
    CONF_KIND,
    CONF_LEVELS,
    CONF_M,
    CONF_MANIFOLD,
    CONF_MG,
    CONF_MIN_LEVEL,
    CONF_NU_SWEEP,
    CONF_OPERATOR,
    CONF_PROBE_DENSITY,
    CONF_RHO_MAX,
    CONF_RHS,
    CONF_SEED,
    CONF_SERIES_TAIL_TOLERANCE,
    CONF_STUDY,
    CONF_THRESHOLDS,
    CONF_TRUNCATION,
    CONF_TRUNCATION_SWEEP,
    CONDITION_DENSE_LIMIT,
    CONDITION_TOLERANCE,
    MANIFOLD_TORUS,
    OUTSIDE_THEORY,
    RHS_MANUFACTURED,
    RHS_RANDOM,
    RHS_ZERO,
    STUDY_COMPLEXITY,
    STUDY_CONTRACTION,
    STUDY_CONVERGENCE,
    STUDY_PROPERTIES,
    StudyConfig,
)
from .exceptions import DomainError, InsufficientDataError, KernelMultigridError
from .geometry import (
    PointHierarchy,
    PointSet,
    QuadratureRule,
    build_hierarchy,
    build_quadrature,
    counting_bounds,
    manifold_from_name,
    torus_quadrature_level,
)
from .helpers import save_csv, save_json
from .kernelspace import (
    LagrangeBasis,
    SpectralKernel,
    decay_profile,
    lagrange_values,
    riesz_ratios,
)
from .matrices import (
    Matrix,
    SparseMatrix,
    dense,
    matvec,
    stored_entries,
    symmetric_part,
)
from .multigrid import (
    LevelStack,
    MgConfig,
    build_stack,
    error_propagation_matrix,
    flop_recursion,
    measure_contraction,
    nu_sweep,
    perturb_stack,
    recursive_iteration_matrix,
    smoothing_profile,
    solve,
    stack_kernel,
    two_grid_norm_sweep,
)
from .sparsify import build_truncated_stack, dense_levels

_LOGGER = logging.getLogger(__name__)

RESIDUAL_NOTE = "residuals are measured in the l2 norm of the coefficient vector"
NONEXPANSIVE_SLACK = 1e-10
EQUIVALENCE_TOLERANCE = 1e-10
# quadrature node blocks used when evaluating L2 errors
_NODE_BLOCK = 4096

CONTRACTION_COLUMNS = [
    "level",
    "N",
    "nu1",
    "nu2",
    "tau",
    "contraction",
    "iterations",
    "flops",
    "method",
    "h",
    "q",
    "rho",
    "kappa",
    "theta",
    "outside_theory",
]
SWEEP_COLUMNS = [
    "level",
    "N",
    "nu1",
    "nu2",
    "tau",
    "contraction",
    "iterations",
    "flops",
    "method",
    "outside_theory",
]
CONVERGENCE_COLUMNS = [
    "level",
    "N",
    "h",
    "iterations",
    "converged",
    "error",
    "order",
    "error_refined",
    "quadrature_change",
]
COMPLEXITY_COLUMNS = [
    "level",
    "N",
    "K",
    "nnz",
    "iterations",
    "flops_per_iteration",
    "predicted_flops",
    "dense_flops",
    "flop_ratio",
    "flop_constant",
    "nnz_constant",
    "cg_iterations",
]
TRUNCATION_COLUMNS = ["K", "level", "N", "nnz", "contraction", "method"]
PROPERTY_COLUMNS = ["check", "value", "threshold", "passed"]
NORM_SWEEP_COLUMNS = ["level", "nu1", "two_grid_norm"]


@dataclass(frozen=True, slots=True)
class CheckResult:
    """A measured value compared against its configured threshold."""

    name: str
    value: float | None
    threshold: str
    passed: bool

    def as_dict(self) -> dict[str, Any]:
        """Return the check as a report row."""
        return {
            "check": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "passed": self.passed,
        }


@dataclass(slots=True)
class StudyReport:
    """Per-level table, sweep table, fits and pass/fail checks of a study."""

    kind: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    sweep_columns: list[str] = field(default_factory=list)
    sweep: list[dict[str, Any]] = field(default_factory=list)
    fits: dict[str, Any] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)
    annotations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Return True when every check passed."""
        return bool(self.checks) and all(check.passed for check in self.checks)

    def check(
        self, name: str, value: float | None, threshold: str, passed: bool
    ) -> None:
        """Record a check."""
        self.checks.append(CheckResult(name, value, threshold, bool(passed)))
        _LOGGER.info(
            "Check %s: %s (%s) %s",
            name,
            value,
            threshold,
            "passed" if passed else "FAILED",
        )

    def annotate(self, note: str) -> None:
        """Record a note once."""
        if note not in self.annotations:
            self.annotations.append(note)

    def as_dict(self) -> dict[str, Any]:
        """Return the JSON document of the report."""
        return {
            "kind": self.kind,
            "passed": self.passed,
            "columns": self.columns,
            "rows": self.rows,
            "sweep": self.sweep,
            "fits": self.fits,
            "checks": [check.as_dict() for check in self.checks],
            "annotations": self.annotations,
        }

    def write(self, directory: Path, prefix: str) -> list[Path]:
        """Write the tables as CSV and the whole report as JSON."""
        stem = f"{prefix}_{self.kind}"
        written = [directory / f"{stem}.csv", directory / f"{stem}.json"]
        save_csv(written[0], self.columns, self.rows)
        if self.sweep:
            written.append(directory / f"{stem}_sweep.csv")
            save_csv(written[-1], self.sweep_columns, self.sweep)
        save_json(written[1], self.as_dict())
        return written


@dataclass(frozen=True, eq=False)
class StudySetup:
    """Hierarchy, kernel, operator and assembled stack of a study config."""

    hierarchy: PointHierarchy
    kernel: SpectralKernel
    op: EllipticOperator
    stack: LevelStack
    mg: MgConfig
    seed: int


# ---------------------------------------------------------------------------
# baselines and estimates
# ---------------------------------------------------------------------------


def _operand(matrix: Matrix) -> Any:
    return matrix.matrix if isinstance(matrix, SparseMatrix) else np.asarray(matrix)


def _is_symmetric(matrix: Matrix) -> bool:
    operand = _operand(matrix)
    if isinstance(matrix, SparseMatrix):
        skew = abs(operand - operand.T).max() if operand.nnz else 0.0
        scale = abs(operand).max() if operand.nnz else 0.0
    else:
        skew = np.max(np.abs(operand - operand.T), initial=0.0)
        scale = np.max(np.abs(operand), initial=0.0)
    return float(skew) <= 1e-12 * float(scale)


def cg_baseline(A: Matrix, b: np.ndarray, tol: float) -> int:
    """Return the iterations unpreconditioned CG needs for ||r|| <= tol ||b||."""
    if A.shape[0] != A.shape[1]:
        raise DomainError("CG needs a square matrix")
    if not _is_symmetric(A):
        raise DomainError("CG needs a symmetric matrix")
    count = 0

    def _count(_: np.ndarray) -> None:
        nonlocal count
        count += 1

    _, info = cg(
        _operand(A),
        b,
        rtol=tol,
        atol=0.0,
        maxiter=10 * A.shape[0],
        callback=_count,
    )
    if info > 0:
        _LOGGER.warning("CG did not reach %.1e within %d iterations", tol, count)
    return count


class ConditionEstimate(NamedTuple):
    """Spectral condition number of a symmetric matrix."""

    kappa: float
    lambda_min: float
    lambda_max: float
    singular: bool


def _power_estimate(apply: Callable[[np.ndarray], np.ndarray], size: int) -> float:
    """Return the dominant eigenvalue magnitude to relative CONDITION_TOLERANCE."""
    vector = np.random.default_rng(0).standard_normal(size)
    vector /= np.linalg.norm(vector)
    estimate = 0.0
    for _ in range(500):
        image = apply(vector)
        previous, estimate = estimate, float(np.linalg.norm(image))
        if estimate == 0.0 or not math.isfinite(estimate):
            return estimate
        vector = image / estimate
        if abs(estimate - previous) <= CONDITION_TOLERANCE * estimate:
            break
    return estimate


def condition_estimate(A: Matrix) -> ConditionEstimate:
    """Return kappa = lambda_max / lambda_min, infinite for singular matrices."""
    if A.shape[0] != A.shape[1]:
        raise DomainError("Condition numbers need a square matrix")
    size = A.shape[0]
    symmetric = symmetric_part(A)
    if size <= CONDITION_DENSE_LIMIT:
        eigenvalues = np.linalg.eigvalsh(dense(symmetric))
        smallest, largest = float(eigenvalues[0]), float(eigenvalues[-1])
    else:
        largest = _power_estimate(lambda v: matvec(symmetric, v), size)
        operand = _operand(symmetric)

        def _inverse(vector: np.ndarray) -> np.ndarray:
            solution, info = cg(
                operand, vector, rtol=1e-10, atol=0.0, maxiter=10 * size
            )
            if info != 0:
                raise InsufficientDataError("Inverse iteration did not converge")
            return solution

        try:
            inverse = _power_estimate(_inverse, size)
            smallest = 1.0 / inverse if inverse > 0.0 else 0.0
        except InsufficientDataError:
            smallest = 0.0
    if smallest <= size * np.finfo(float).eps * abs(largest):
        _LOGGER.warning("Matrix of size %d is numerically singular", size)
        return ConditionEstimate(math.inf, smallest, largest, True)
    return ConditionEstimate(largest / smallest, smallest, largest, False)


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------


def elliptic_operator(cfg: StudyConfig) -> EllipticOperator:
    """Return the operator of a study config."""
    options = cfg[CONF_OPERATOR]
    advection = options[CONF_ADVECTION]
    return EllipticOperator(
        c=options[CONF_C],
        advection=None if advection is None else tuple(advection),
        c_min=options[CONF_C_MIN],
    )


def hierarchy_from_config(cfg: StudyConfig) -> PointHierarchy:
    """Build the point hierarchy of a validated study config."""
    options = cfg[CONF_HIERARCHY]
    return build_hierarchy(
        manifold_from_name(cfg[CONF_MANIFOLD]),
        options[CONF_LEVELS],
        options[CONF_BASE],
        probe_density=options[CONF_PROBE_DENSITY],
        rho_max=options[CONF_RHO_MAX],
    )


def build_setup(cfg: StudyConfig, basis_cache: Path | None = None) -> StudySetup:
    """Build hierarchy, kernel and stack from a validated study config."""
    hierarchy = hierarchy_from_config(cfg)
    kernel = stack_kernel(
        hierarchy,
        cfg[CONF_KERNEL][CONF_M],
        cfg[CONF_KERNEL][CONF_SERIES_TAIL_TOLERANCE],
    )
    op = elliptic_operator(cfg)
    stack = build_stack(
        hierarchy, kernel, op, seed=cfg[CONF_SEED], basis_cache=basis_cache
    )
    mg = MgConfig.from_options(cfg[CONF_MG])
    return StudySetup(hierarchy, kernel, op, stack, mg, cfg[CONF_SEED])


def manufactured_solution(
    setup: StudySetup,
) -> tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]:
    """Return (u*, f = L u*) for an eigenfunction of the Laplace-Beltrami operator.

    Torus: u* = cos(x1) cos(2 x2) with eigenvalue 5. Sphere: u* = z with
    eigenvalue 2.
    """
    c = float(setup.op.c)
    if setup.hierarchy.manifold.kind == MANIFOLD_TORUS:
        a1, a2 = setup.op.advection or (0.0, 0.0)

        def exact(x: np.ndarray) -> np.ndarray:
            return np.cos(x[:, 0]) * np.cos(2.0 * x[:, 1])

        def rhs(x: np.ndarray) -> np.ndarray:
            return (
                (5.0 + c) * exact(x)
                - a1 * np.sin(x[:, 0]) * np.cos(2.0 * x[:, 1])
                - 2.0 * a2 * np.cos(x[:, 0]) * np.sin(2.0 * x[:, 1])
            )

        return exact, rhs

    def exact_sphere(x: np.ndarray) -> np.ndarray:
        return x[:, 2].copy()

    return exact_sphere, lambda x: (2.0 + c) * x[:, 2]


def quadrature_for(setup: StudySetup, top: int, refine: int = 0) -> QuadratureRule:
    """Return a quadrature rule resolving the finest used level four times over."""
    hierarchy = setup.hierarchy
    if hierarchy.manifold.kind == MANIFOLD_TORUS:
        per_axis = 4 * hierarchy.levels[top].lattice
        level = torus_quadrature_level(per_axis) + refine
        return build_quadrature(hierarchy.manifold, level)
    subdivisions = round(math.log((len(hierarchy.levels[top]) - 2) / 10, 4))
    return build_quadrature(hierarchy.manifold, subdivisions + 2 + refine)


def right_hand_side(setup: StudySetup, level: int, kind: str, seed: int) -> np.ndarray:
    """Return the coefficient right-hand side of a level for an rhs kind."""
    size = setup.stack.size(level)
    if kind == RHS_ZERO:
        return np.zeros(size)
    if kind == RHS_RANDOM:
        return np.random.default_rng(seed + level).standard_normal(size)
    if kind == RHS_MANUFACTURED:
        _, rhs = manufactured_solution(setup)
        quad = quadrature_for(setup, level)
        return assemble_load(setup.stack.bases[level], rhs, quad)
    raise DomainError(f"Unknown right-hand side kind {kind!r}")


def l2_error(
    basis: LagrangeBasis,
    coefficients: np.ndarray,
    exact: Callable[[np.ndarray], np.ndarray],
    quad: QuadratureRule,
) -> float:
    """Return ||sum_xi u_xi chi_xi - u*||_L2 by quadrature."""
    nodes = quad.nodes
    total = 0.0
    for start in range(0, len(nodes), _NODE_BLOCK):
        block = slice(start, start + _NODE_BLOCK)
        coords = nodes.coords[block]
        block_nodes = PointSet(coords, nodes.manifold, nodes.lattice)
        approx = lagrange_values(basis, block_nodes) @ coefficients
        total += float(quad.weights[block] @ (approx - exact(coords)) ** 2)
    return math.sqrt(total)


def _stack_notes(report: StudyReport, stack: LevelStack, cfg: MgConfig) -> None:
    if cfg.outside_theory:
        report.annotate(f"tau={cfg.tau} is {OUTSIDE_THEORY}")
    for system in stack.systems:
        if system.damping is not None and not system.damping.converged:
            report.annotate(
                f"power iteration on level {system.level} did not settle,"
                " damping uses the 0.8 safety factor"
            )


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def contraction_study(cfg: StudyConfig, setup: StudySetup | None = None) -> StudyReport:
    """Sweep smoothing steps, find nu* and tabulate the contraction per level."""
    setup = setup or build_setup(cfg)
    study = cfg[CONF_STUDY]
    thresholds = cfg[CONF_THRESHOLDS]
    stack, mg = setup.stack, setup.mg
    limit = study[CONF_EXPLICIT_LIMIT]
    report = StudyReport(STUDY_CONTRACTION, CONTRACTION_COLUMNS)
    report.sweep_columns = SWEEP_COLUMNS
    _stack_notes(report, stack, mg)
    report.annotate(RESIDUAL_NOTE)

    sweep = nu_sweep(
        stack, mg, study[CONF_NU_SWEEP], explicit_limit=limit, seed=setup.seed
    )
    right_hand_sides = [
        right_hand_side(setup, level, study[CONF_RHS], setup.seed)
        for level in range(stack.top + 1)
    ]
    for row in sweep.rows:
        level = row["level"]
        _, solved = solve(
            stack.restricted(level),
            right_hand_sides[level],
            mg.with_smoothing(row["nu1"]),
        )
        report.sweep.append(
            row | {"iterations": solved.iterations, "flops": solved.flops}
        )

    nu = sweep.nu_star if sweep.nu_star is not None else max(study[CONF_NU_SWEEP])
    chosen = mg.with_smoothing(nu)
    for level, system in enumerate(stack.systems):
        stats = setup.hierarchy.stats[level]
        measured = measure_contraction(
            stack, level, chosen, explicit_limit=limit, seed=setup.seed
        )
        _, solved = solve(stack.restricted(level), right_hand_sides[level], chosen)
        report.rows.append(
            {
                "level": level,
                "N": system.size,
                "nu1": nu,
                "nu2": nu,
                "tau": mg.tau,
                "contraction": measured.value,
                "iterations": solved.iterations,
                "flops": solved.flops,
                "method": measured.method,
                "h": stats.h,
                "q": stats.q,
                "rho": stats.rho,
                "kappa": condition_estimate(system.A).kappa,
                "theta": system.theta,
                "outside_theory": mg.outside_theory,
            }
        )

    report.fits["nu_star"] = sweep.nu_star
    by_nu: dict[int, dict[int, float]] = {}
    for row in sweep.rows:
        by_nu.setdefault(row["nu1"], {})[row["level"]] = row["contraction"]
    if len(by_nu) > 1:
        fewest, most = by_nu[min(by_nu)], by_nu[max(by_nu)]
        report.fits["smoothing_monotone"] = all(
            most[level] < fewest[level] for level in fewest
        )
    contractions = [row["contraction"] for row in report.rows if row["level"] > 0]
    report.check("nu_star_found", sweep.nu_star, "exists", sweep.nu_star is not None)
    if contractions:
        worst = max(contractions)
        spread = worst - min(contractions)
        report.check(
            "contraction_below_target",
            worst,
            f"<= {mg.gamma_target:g}",
            worst <= mg.gamma_target,
        )
        report.check(
            "contraction_spread",
            spread,
            f"<= {thresholds['contraction_spread']:g}",
            spread <= thresholds["contraction_spread"],
        )
    return report


def convergence_study(cfg: StudyConfig, setup: StudySetup | None = None) -> StudyReport:
    """Measure the L2 error of manufactured solutions on levels 1..L."""
    setup = setup or build_setup(cfg)
    study = cfg[CONF_STUDY]
    thresholds = cfg[CONF_THRESHOLDS]
    stack = setup.stack
    mg = MgConfig(
        tau=setup.mg.tau,
        nu1=setup.mg.nu1,
        nu2=setup.mg.nu2,
        eps_max=study[CONF_CONVERGENCE_EPS],
        max_iters=setup.mg.max_iters,
        gamma_target=setup.mg.gamma_target,
    )
    report = StudyReport(STUDY_CONVERGENCE, CONVERGENCE_COLUMNS)
    _stack_notes(report, stack, mg)
    report.annotate(RESIDUAL_NOTE)
    exact, rhs = manufactured_solution(setup)
    quad = quadrature_for(setup, stack.top)
    refined = quadrature_for(setup, stack.top, refine=1)

    errors: list[float] = []
    changes: list[float] = []
    all_converged = True
    for level in range(1, stack.top + 1):
        sub = stack.restricted(level)
        basis = stack.bases[level]
        solution, solved = solve(sub, assemble_load(basis, rhs, quad), mg)
        error = l2_error(basis, solution, exact, quad)
        fine_solution, _ = solve(sub, assemble_load(basis, rhs, refined), mg)
        error_refined = l2_error(basis, fine_solution, exact, refined)
        change = abs(error_refined - error) / error if error > 0.0 else 0.0
        order = None
        if errors:
            ratio = setup.hierarchy.stats[level - 1].h / setup.hierarchy.stats[level].h
            order = math.log(errors[-1] / error) / math.log(ratio)
        all_converged &= solved.converged
        errors.append(error)
        changes.append(change)
        report.rows.append(
            {
                "level": level,
                "N": sub.size(level),
                "h": setup.hierarchy.stats[level].h,
                "iterations": solved.iterations,
                "converged": solved.converged,
                "error": error,
                "order": order,
                "error_refined": error_refined,
                "quadrature_change": change,
            }
        )
        _LOGGER.info("Level %d: L2 error %.3e, order %s", level, error, order)

    orders = [row["order"] for row in report.rows if row["order"] is not None]
    median = float(np.median(orders)) if orders else None
    report.fits["median_order"] = median
    report.check(
        "median_order",
        median,
        f">= {thresholds['min_order']:g}",
        median is not None and median >= thresholds["min_order"],
    )
    report.check(
        "errors_decrease",
        errors[-1] if errors else None,
        "monotone",
        len(errors) > 1
        and all(b < a for a, b in zip(errors, errors[1:], strict=False)),
    )
    report.check(
        "quadrature_change",
        max(changes, default=None),
        f"< {thresholds['quadrature_change']:g}",
        bool(changes) and max(changes) < thresholds["quadrature_change"],
    )
    report.check("solves_converged", float(all_converged), "true", all_converged)
    return report


def _truncation_sweep(
    report: StudyReport,
    stack: LevelStack,
    mg: MgConfig,
    sweep: Sequence[float],
    limit: int,
    seed: int,
) -> float | None:
    """Return the smallest K whose truncated cycle contracts on the finest level."""
    for K in sorted(sweep):
        truncated = build_truncated_stack(stack, K, seed)
        measured = measure_contraction(truncated, stack.top, mg, explicit_limit=limit)
        report.sweep.append(
            {
                "K": K,
                "level": stack.top,
                "N": stack.size(stack.top),
                "nnz": stored_entries(truncated.systems[-1].A),
                "contraction": measured.value,
                "method": measured.method,
            }
        )
        if measured.value < 1.0:
            return K
    return None


def _band(values: list[float], width: float) -> tuple[float | None, bool]:
    """Return the median and whether all values lie within median (1 +- width)."""
    if not values:
        return None, False
    median = float(np.median(values))
    return median, all(abs(value / median - 1.0) <= width for value in values)


def complexity_study(cfg: StudyConfig, setup: StudySetup | None = None) -> StudyReport:
    """Compare truncated tau-cycle costs and iterations with CG across levels."""
    setup = setup or build_setup(cfg)
    study = cfg[CONF_STUDY]
    thresholds = cfg[CONF_THRESHOLDS]
    stack = setup.stack
    mg = MgConfig(
        tau=setup.mg.tau,
        nu1=setup.mg.nu1,
        nu2=setup.mg.nu2,
        eps_max=study[CONF_COMPLEXITY_EPS],
        max_iters=setup.mg.max_iters,
        gamma_target=setup.mg.gamma_target,
    )
    report = StudyReport(STUDY_COMPLEXITY, COMPLEXITY_COLUMNS)
    report.sweep_columns = TRUNCATION_COLUMNS
    _stack_notes(report, stack, mg)
    report.annotate(RESIDUAL_NOTE)
    first = study[CONF_MIN_LEVEL]
    if first > stack.top:
        raise InsufficientDataError(
            f"Complexity study needs levels {first}..{stack.top}, hierarchy stops at"
            f" {stack.top}"
        )
    dim = setup.hierarchy.manifold.dim
    gamma = setup.hierarchy.gamma_bounds
    if gamma is not None and mg.tau * gamma[1] ** dim >= 1.0:
        report.annotate(f"tau gamma^d = {mg.tau * gamma[1] ** dim:.3f} >= 1")

    K = cfg[CONF_MG][CONF_TRUNCATION]
    if K is None:
        K = _truncation_sweep(
            report,
            stack,
            mg,
            study[CONF_TRUNCATION_SWEEP],
            study[CONF_EXPLICIT_LIMIT],
            setup.seed,
        )
    report.fits["K"] = K
    report.check("truncation_found", K, "contraction < 1", K is not None)
    if K is None:
        return report

    for level in range(first, stack.top + 1):
        sub = stack.restricted(level)
        truncated = build_truncated_stack(sub, K, setup.seed)
        for kept in dense_levels(truncated)[1:]:
            report.annotate(f"level {kept} keeps dense matrices (h >= 1)")
        b = right_hand_side(setup, level, study[CONF_RHS], setup.seed)
        _, solved = solve(truncated, b, mg)
        size = sub.size(level)
        per_iteration = solved.flops / solved.iterations if solved.iterations else 0.0
        scale = size * math.log(size) ** dim
        dense_cost = flop_recursion(sub, mg)[level]
        report.rows.append(
            {
                "level": level,
                "N": size,
                "K": K,
                "nnz": stored_entries(truncated.systems[level].A),
                "iterations": solved.iterations,
                "flops_per_iteration": per_iteration,
                "predicted_flops": flop_recursion(truncated, mg)[level],
                "dense_flops": dense_cost,
                "flop_ratio": per_iteration / dense_cost,
                "flop_constant": per_iteration / scale,
                "nnz_constant": stored_entries(truncated.systems[level].A) / scale,
                "cg_iterations": cg_baseline(sub.systems[level].A, b, mg.eps_max)
                if sub.systems[level].symmetric
                else None,
            }
        )

    width = thresholds["complexity_band"]
    flop_median, flop_ok = _band([row["flop_constant"] for row in report.rows], width)
    nnz_median, nnz_ok = _band([row["nnz_constant"] for row in report.rows], width)
    report.fits |= {"flop_constant": flop_median, "nnz_constant": nnz_median}
    report.check("flop_constant_band", flop_median, f"median +- {width:g}", flop_ok)
    report.check("nnz_constant_band", nnz_median, f"median +- {width:g}", nnz_ok)
    iterations = [row["iterations"] for row in report.rows]
    spread = max(iterations) - min(iterations)
    report.check(
        "iteration_spread",
        float(spread),
        f"<= {thresholds['iteration_spread']}",
        spread <= thresholds["iteration_spread"],
    )
    cg_counts = [row["cg_iterations"] for row in report.rows]
    if None not in cg_counts and len(cg_counts) > 1:
        growth = min(b / a for a, b in zip(cg_counts, cg_counts[1:], strict=False) if a)
        report.check(
            "cg_growth",
            growth,
            f">= {thresholds['cg_growth']:g}",
            all(b > a for a, b in zip(cg_counts, cg_counts[1:], strict=False))
            and growth >= thresholds["cg_growth"],
        )
    return report


def _ratio_band(values: Sequence[float]) -> float:
    return max(values) / min(values) if min(values) > 0 else math.inf


def properties_study(cfg: StudyConfig, setup: StudySetup | None = None) -> StudyReport:
    """Surface the discretization and smoother properties as one row per check."""
    setup = setup or build_setup(cfg)
    thresholds = cfg[CONF_THRESHOLDS]
    stack, hierarchy, mg = setup.stack, setup.hierarchy, setup.mg
    limit = cfg[CONF_STUDY][CONF_EXPLICIT_LIMIT]
    report = StudyReport(STUDY_PROPERTIES, PROPERTY_COLUMNS)
    report.sweep_columns = NORM_SWEEP_COLUMNS
    _stack_notes(report, stack, mg)
    levels = range(1, stack.top + 1)
    dim = hierarchy.manifold.dim

    def add(name: str, value: float | None, threshold: str, passed: bool) -> None:
        report.check(name, value, threshold, passed)
        report.rows.append(report.checks[-1].as_dict())

    counts_ok = True
    for points, stats in zip(hierarchy.levels, hierarchy.stats, strict=True):
        lower, upper = counting_bounds(hierarchy.manifold, stats)
        counts_ok &= lower <= len(points) <= upper
    finest_count = float(len(hierarchy.levels[-1]))
    add("point_count_window", finest_count, "counting bounds", counts_ok)

    cardinality = max(basis.cardinality_error for basis in stack.bases)
    add(
        "cardinality",
        cardinality,
        f"<= {thresholds['cardinality']:g}",
        cardinality <= thresholds["cardinality"],
    )

    estimates = [condition_estimate(system.A) for system in stack.systems]
    report.fits["kappa"] = [estimate.kappa for estimate in estimates]
    low, high = thresholds["kappa_ratio_min"], thresholds["kappa_ratio_max"]
    for level in levels:
        ratio = estimates[level].kappa / estimates[level - 1].kappa
        add(
            f"kappa_growth_{level}",
            ratio,
            f"kappa_{level} / kappa_{level - 1} in [{low:g}, {high:g}]",
            low <= ratio <= high,
        )
    if len(levels) > 1:
        largest = [estimates[level].lambda_max for level in levels]
        smallest = [
            estimates[level].lambda_min / hierarchy.stats[level].h ** dim
            for level in levels
        ]
        spread = max(_ratio_band(largest), _ratio_band(smallest))
        add(
            "scaled_norms",
            spread,
            f"<= {thresholds['scaled_norm_band']:g}",
            spread <= thresholds["scaled_norm_band"],
        )
    diagonal_ratios = [_ratio_band(system.B.tolist()) for system in stack.systems]
    report.fits["diagonal_ratios"] = diagonal_ratios
    if len(diagonal_ratios) > 1:
        ratio = _ratio_band(diagonal_ratios)
        add(
            "diagonal_ratio",
            ratio,
            f"max B / min B varies by <= {thresholds['diag_ratio_band']:g}",
            ratio <= thresholds["diag_ratio_band"],
        )

    riesz_min, riesz_max = [], []
    for level, basis in enumerate(stack.bases):
        ratios = riesz_ratios(
            basis,
            quadrature_for(setup, level),
            hierarchy.stats[level].q,
            seed=setup.seed + level,
        )
        riesz_min.append(float(ratios.min()))
        riesz_max.append(float(ratios.max()))
    report.fits["riesz_min"] = riesz_min
    report.fits["riesz_max"] = riesz_max
    riesz = max(riesz_max) / min(riesz_min)
    add(
        "riesz_band",
        riesz,
        f"<= {thresholds['riesz_band']:g} over levels 0..{stack.top}",
        riesz <= thresholds["riesz_band"],
    )

    top = stack.top
    finest = stack.bases[top]

    if top >= 1:
        for name, measure in (
            ("lagrange_decay", lambda: decay_profile(finest, 0, hierarchy.stats[top])),
            (
                "stiffness_decay",
                lambda: stiffness_decay(
                    stack.systems[top], hierarchy.levels[top], hierarchy.stats[top]
                ),
            ),
        ):
            try:
                fit = measure()
            except InsufficientDataError as err:
                report.annotate(f"{name}: {err}")
                add(name, None, "slope < 0", False)
                continue
            report.fits[f"{name}_slope"] = fit.slope
            report.fits[f"{name}_r_squared"] = fit.r_squared
            add(
                name,
                fit.slope,
                f"slope < 0, r^2 >= {thresholds['decay_r_squared']:g}",
                fit.slope < 0.0 and fit.r_squared >= thresholds["decay_r_squared"],
            )

    damping_ok = all(check_damping(system, seed=setup.seed) for system in stack.systems)
    add("damping", float(damping_ok), "theta <Av,v> <= <Bv,v>", damping_ok)

    symmetric = all(system.symmetric for system in stack.systems)
    profiles = [
        smoothing_profile(stack.systems[level])
        for level in levels
        if stack.size(level) <= limit
    ]
    if profiles:
        if symmetric:
            worst = max(profile.nonexpansive_norm for profile in profiles)
            add(
                "jacobi_nonexpansive",
                worst,
                f"<= 1 + {NONEXPANSIVE_SLACK:g}",
                worst <= 1.0 + NONEXPANSIVE_SLACK,
            )
            scaled = max(profile.scaled_ratio for profile in profiles)
            add(
                "smoothing_property",
                scaled,
                f"<= {thresholds['smoothing_band']:g}",
                scaled <= thresholds["smoothing_band"],
            )
        else:
            exponent = max(profile.exponent for profile in profiles)
            add("smoothing_decay", exponent, "<= -0.2", exponent <= -0.2)

    if top >= 1 and stack.size(top) <= limit:
        iterated = error_propagation_matrix(stack, top, mg, limit)
        explicit = recursive_iteration_matrix(stack, top, mg, limit)
        gap = float(np.max(np.abs(iterated - explicit)))
        add(
            "cycle_matrix_equivalence",
            gap,
            f"<= {EQUIVALENCE_TOLERANCE:g}",
            gap <= EQUIVALENCE_TOLERANCE,
        )
        norms, exponent = two_grid_norm_sweep(stack, top, mg)
        report.sweep = [
            {"level": top, "nu1": nu, "two_grid_norm": norm}
            for nu, norm in norms.items()
        ]
        report.fits["two_grid_norm_exponent"] = exponent

    if top >= 1:
        schedule = [stats.h ** (dim + 2) for stats in hierarchy.stats]
        try:
            perturbed = perturb_stack(stack, schedule, seed=setup.seed)
            measured = measure_contraction(
                perturbed, top, mg, explicit_limit=limit, seed=setup.seed
            ).value
        except KernelMultigridError as err:
            report.annotate(f"perturbed stack: {err}")
            measured = None
        add(
            "perturbed_contraction",
            measured,
            "< 1",
            measured is not None and measured < 1.0,
        )
    return report


STUDIES: dict[str, Callable[[StudyConfig, StudySetup | None], StudyReport]] = {
    STUDY_CONTRACTION: contraction_study,
    STUDY_CONVERGENCE: convergence_study,
    STUDY_COMPLEXITY: complexity_study,
    STUDY_PROPERTIES: properties_study,
}


def run_study(cfg: StudyConfig, setup: StudySetup | None = None) -> StudyReport:
    """Run the study named in the config."""
    kind = cfg[CONF_STUDY][CONF_KIND]
    _LOGGER.info("Running %s study on the %s", kind, cfg[CONF_MANIFOLD])
    return STUDIES[kind](cfg, setup)

