"""Tests for the mgm command line interface."""

from collections.abc import Iterator
import logging
from pathlib import Path

import orjson
import pytest

from kernel_multigrid.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, run_cli

from .helpers_systems import write_config


@pytest.fixture(autouse=True)
def restore_root_logger() -> Iterator[None]:
    """Undo the handler setup of each command."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers = handlers
    root.setLevel(level)


@pytest.fixture
def config_path(tmp_path: Path, study_document: dict) -> Path:
    """Write a two-level torus config with 16 and 64 points."""
    study_document["hierarchy"]["levels"] = 1
    return write_config(tmp_path, study_document)


# ---------------------------------------------------------------------------
# usage errors
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["solve"], ["study", "--config", "x.json", "--kind", "all"]],
)
def test_usage_errors(argv: list[str], capsys: pytest.CaptureFixture[str]) -> None:
    """Bad command lines exit with 1 and print the usage."""
    assert run_cli(argv) == EXIT_ERROR
    assert "usage: mgm" in capsys.readouterr().err


def test_missing_config_file(tmp_path: Path) -> None:
    """Unreadable config files are reported."""
    assert run_cli(["solve", "--config", str(tmp_path / "none.json")]) == EXIT_ERROR


def test_invalid_config(tmp_path: Path) -> None:
    """Schema violations are reported."""
    path = write_config(tmp_path, {"mg": {"tau": 0}})
    assert run_cli(["hierarchy", "--config", str(path)]) == EXIT_ERROR


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def test_hierarchy_command(config_path: Path, tmp_path: Path) -> None:
    """The hierarchy is written as JSON to the --out directory."""
    out = tmp_path / "elsewhere"
    code = run_cli(["hierarchy", "--config", str(config_path), "--out", str(out)])
    assert code == EXIT_OK
    document = orjson.loads((out / "t_hierarchy.json").read_bytes())
    assert document["manifold"] == "torus"
    assert len(document["levels"]) == 2


def test_solve_command(config_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """The solve report goes to stdout."""
    assert run_cli(["solve", "--config", str(config_path), "--seed", "3"]) == EXIT_OK
    report = orjson.loads(capsys.readouterr().out)
    assert report["converged"] is True
    assert report["iterations"] > 0


def test_assemble_command(tmp_path: Path, study_document: dict) -> None:
    """Matrices, transfers and truncated matrices are exported as MTX and CSV."""
    study_document["hierarchy"]["levels"] = 1
    study_document["mg"] = {"truncation": 4.0}
    path = write_config(tmp_path, study_document)
    assert run_cli(["assemble", "--config", str(path)]) == EXIT_OK
    out = tmp_path / "out"
    assert {item.name for item in out.iterdir()} == {
        "t_A0.csv",
        "t_A0.dmat",
        "t_A0.mtx",
        "t_A1.csv",
        "t_A1.dmat",
        "t_A1.mtx",
        "t_P1.csv",
        "t_P1.mtx",
        "t_A1_truncated.csv",
        "t_A1_truncated.mtx",
        "t_basis",
    }
    assert (out / "t_A0.csv").read_text().startswith("row,col,value\n0,0,")
    assert {item.name for item in (out / "t_basis").iterdir()} == {
        "level0.lagb",
        "level1.lagb",
    }


def test_study_command(config_path: Path, tmp_path: Path) -> None:
    """Studies write their tables and exit with 0 or 2."""
    code = run_cli(["study", "--config", str(config_path), "--kind", "contraction"])
    assert code in (EXIT_OK, EXIT_FAILED)
    out = tmp_path / "out"
    assert (out / "t_contraction.csv").is_file()
    report = orjson.loads((out / "t_contraction.json").read_bytes())
    assert report["passed"] is (code == EXIT_OK)
    assert (out / "t_contraction_sweep.csv").is_file()
