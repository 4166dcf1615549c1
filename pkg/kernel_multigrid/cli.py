"""Command line interface of the kernel multigrid solver."""

import argparse
from collections.abc import Sequence
import logging
from pathlib import Path
import sys
from typing import NoReturn

import colorlog

from .config import load_study_config
from .const import (
    CONF_DIRECTORY,
    CONF_KIND,
    CONF_MG,
    CONF_OUTPUT,
    CONF_PREFIX,
    CONF_RHS,
    CONF_SEED,
    CONF_STUDY,
    CONF_TRUNCATION,
    STUDY_KINDS,
    StudyConfig,
)
from .exceptions import KernelMultigridError
from .helpers import (
    dense_matrix_bytes,
    json_bytes,
    matrix_market_bytes,
    save_json,
    save_matrix_csv,
    write_file_atomic,
)
from .matrices import Matrix, SparseMatrix, dense
from .multigrid import solve
from .sparsify import build_truncated_stack
from .studio import build_setup, hierarchy_from_config, right_hand_side, run_study

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2

LOG_FORMAT = "%(asctime)s %(levelname)s (%(threadName)s) [%(name)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class UsageError(Exception):
    """Raised when the command line cannot be parsed."""


class _Parser(argparse.ArgumentParser):
    """Argument parser reporting usage errors instead of exiting."""

    def error(self, message: str) -> NoReturn:
        """Print the usage to stderr and abort parsing."""
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    """Return the parser of the mgm command."""
    parser = _Parser(
        prog="mgm",
        description="Kernel based Galerkin multigrid on the sphere and the torus",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument(
        "--config", type=Path, required=True, help="study config JSON document"
    )
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument(
        "-v", "--verbose", action="store_true", help="enable debug logging"
    )

    subparsers.add_parser(
        "hierarchy", parents=[common], help="build and write the point hierarchy"
    )
    assemble = subparsers.add_parser(
        "assemble", parents=[common], help="assemble and export the level matrices"
    )
    assemble.add_argument(
        "--basis-cache", type=Path, help="directory of cached Lagrange coefficients"
    )
    solve_parser = subparsers.add_parser(
        "solve", parents=[common], help="run one multigrid solve"
    )
    solve_parser.add_argument("--basis-cache", type=Path)
    study = subparsers.add_parser("study", parents=[common], help="run a study")
    study.add_argument("--kind", choices=STUDY_KINDS, help="override the study kind")
    study.add_argument("--basis-cache", type=Path)
    return parser


def setup_logging(verbose: bool) -> None:
    """Install a colored stderr handler on the root logger."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        colorlog.ColoredFormatter(
            f"%(log_color)s{LOG_FORMAT}%(reset)s",
            datefmt=DATE_FORMAT,
            reset=True,
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "red",
            },
        )
    )
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _apply_overrides(cfg: StudyConfig, args: argparse.Namespace) -> StudyConfig:
    """Merge command line overrides into the validated config."""
    if args.seed is not None:
        cfg[CONF_SEED] = args.seed
    if args.out is not None:
        cfg[CONF_OUTPUT][CONF_DIRECTORY] = str(args.out)
    if getattr(args, "kind", None) is not None:
        cfg[CONF_STUDY][CONF_KIND] = args.kind
    return cfg


def _output(cfg: StudyConfig) -> tuple[Path, str]:
    output = cfg[CONF_OUTPUT]
    return Path(output[CONF_DIRECTORY]), output[CONF_PREFIX]


def _hierarchy(cfg: StudyConfig) -> int:
    directory, prefix = _output(cfg)
    hierarchy = hierarchy_from_config(cfg)
    path = directory / f"{prefix}_hierarchy.json"
    save_json(path, hierarchy.as_document())
    _LOGGER.info("Wrote %d levels to %s", len(hierarchy.levels), path)
    return EXIT_OK


def _export_matrix(
    directory: Path, stem: str, matrix: Matrix, binary: bool = False
) -> None:
    if binary:
        write_file_atomic(directory / f"{stem}.dmat", dense_matrix_bytes(dense(matrix)))
    operand = matrix.matrix if isinstance(matrix, SparseMatrix) else dense(matrix)
    write_file_atomic(directory / f"{stem}.mtx", matrix_market_bytes(operand))
    save_matrix_csv(directory / f"{stem}.csv", operand)


def _assemble(cfg: StudyConfig, basis_cache: Path | None) -> int:
    directory, prefix = _output(cfg)
    setup = build_setup(cfg, basis_cache or directory / f"{prefix}_basis")
    stack = setup.stack
    for level, system in enumerate(stack.systems):
        _export_matrix(directory, f"{prefix}_A{level}", system.A, binary=True)
        if level:
            _export_matrix(directory, f"{prefix}_P{level}", stack.transfer(level).P)
    if (K := cfg[CONF_MG][CONF_TRUNCATION]) is not None:
        truncated = build_truncated_stack(stack, K, setup.seed)
        for level, system in enumerate(truncated.systems):
            if isinstance(system.A, SparseMatrix):
                _export_matrix(directory, f"{prefix}_A{level}_truncated", system.A)
    _LOGGER.info("Wrote %d levels of matrices to %s", len(stack.systems), directory)
    return EXIT_OK


def _solve(cfg: StudyConfig, basis_cache: Path | None) -> int:
    setup = build_setup(cfg, basis_cache)
    stack = setup.stack
    if setup.mg.truncation is not None:
        stack = build_truncated_stack(stack, setup.mg.truncation, setup.seed)
    b = right_hand_side(setup, stack.top, cfg[CONF_STUDY][CONF_RHS], setup.seed)
    _, report = solve(stack, b, setup.mg)
    sys.stdout.write(json_bytes(report.as_dict()).decode("utf-8"))
    return EXIT_OK if report.converged else EXIT_FAILED


def _study(cfg: StudyConfig, basis_cache: Path | None) -> int:
    directory, prefix = _output(cfg)
    setup = build_setup(cfg, basis_cache)
    report = run_study(cfg, setup)
    for path in report.write(directory, prefix):
        _LOGGER.info("Wrote %s", path)
    if not report.passed:
        failed = [check.name for check in report.checks if not check.passed]
        _LOGGER.warning("Study %s failed checks: %s", report.kind, ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Run the mgm command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_ERROR
    setup_logging(args.verbose)
    try:
        cfg = _apply_overrides(load_study_config(args.config), args)
        basis_cache = getattr(args, "basis_cache", None)
        match args.command:
            case "hierarchy":
                return _hierarchy(cfg)
            case "assemble":
                return _assemble(cfg, basis_cache)
            case "solve":
                return _solve(cfg, basis_cache)
            case "study":
                return _study(cfg, basis_cache)
    except (KernelMultigridError, OSError) as err:
        _LOGGER.error("%s: %s", args.config, err)
        return EXIT_ERROR
    return EXIT_ERROR
