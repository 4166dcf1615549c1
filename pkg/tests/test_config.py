"""Tests for study config defaults and validation."""

from pathlib import Path

import orjson
import pytest

from kernel_multigrid.config import (
    StudyDefaults,
    default_study_config,
    load_study_config,
    parse_study_config,
)
from kernel_multigrid.exceptions import ConfigError

from .helpers_systems import write_config


def test_defaults_fill_every_section() -> None:
    """An empty document validates to the packaged defaults."""
    cfg = default_study_config()
    assert cfg["manifold"] == "torus"
    assert cfg["mg"]["tau"] == 2
    assert cfg["mg"]["truncation"] is None
    assert cfg["study"]["nu_sweep"] == [1, 2, 4, 8, 16, 32]
    assert cfg["thresholds"] == StudyDefaults().thresholds


def test_partial_sections_keep_their_defaults(study_document: dict) -> None:
    """Given keys override, missing keys fall back to defaults."""
    cfg = parse_study_config(orjson.dumps(study_document))
    assert cfg["hierarchy"]["levels"] == 2
    assert cfg["hierarchy"]["rho_max"] == 3.0
    assert cfg["study"]["truncation_sweep"] == [2.0, 4.0]
    assert cfg["study"]["kind"] == "contraction"


def test_defaults_are_copied() -> None:
    """Editing a returned section leaves the defaults alone."""
    defaults = StudyDefaults()
    defaults.section("mg")["tau"] = 5
    assert defaults.section("mg")["tau"] == 2


def test_extra_keys_are_rejected() -> None:
    """Unknown keys are reported with their path and line."""
    with pytest.raises(ConfigError) as err:
        parse_study_config('{\n  "manifold": "torus",\n  "colour": 1\n}')
    assert "extra keys not allowed" in str(err.value)
    assert err.value.path == ["colour"]
    assert err.value.line == 3


def test_nested_values_are_validated() -> None:
    """Smoothing counts start at one."""
    with pytest.raises(ConfigError) as err:
        parse_study_config('{"mg": {"nu1": 0}}')
    assert err.value.path == ["mg", "nu1"]
    assert err.value.line == 1


@pytest.mark.parametrize(
    "document",
    [
        {"manifold": "klein"},
        {"operator": {"advection": [1.0, 2.0, 3.0]}},
        {"kernel": {"m": 2}},
        {"study": {"rhs": "constant"}},
        {"study": {"nu_sweep": []}},
    ],
)
def test_invalid_documents(document: dict) -> None:
    """Values outside their schema raise config errors."""
    with pytest.raises(ConfigError):
        parse_study_config(orjson.dumps(document))


def test_malformed_json_reports_its_position() -> None:
    """Syntax errors carry a line and a column."""
    with pytest.raises(ConfigError) as err:
        parse_study_config('{\n  "seed": 1,\n}')
    assert err.value.line is not None
    assert err.value.column is not None
    assert str(err.value).startswith("line ")


def test_document_must_be_an_object() -> None:
    """A JSON list is not a config."""
    with pytest.raises(ConfigError):
        parse_study_config("[1, 2]")


def test_load_study_config(tmp_path: Path, study_document: dict) -> None:
    """Config files are read and validated."""
    cfg = load_study_config(write_config(tmp_path, study_document))
    assert cfg["output"]["prefix"] == "t"
