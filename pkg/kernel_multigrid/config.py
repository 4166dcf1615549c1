"""Load study defaults from json files and validate study configurations."""

import copy
import logging
from pathlib import Path
from typing import Any, cast

import orjson
import voluptuous as vol

from .const import (
    CONF_ADVECTION,
    CONF_BASE,
    CONF_C,
    CONF_C_MIN,
    CONF_COMPLEXITY_EPS,
    CONF_CONVERGENCE_EPS,
    CONF_DIRECTORY,
    CONF_EPS_MAX,
    CONF_EXPLICIT_LIMIT,
    CONF_GAMMA_TARGET,
    CONF_HIERARCHY,
    CONF_KERNEL,
    CONF_KIND,
    CONF_LEVELS,
    CONF_M,
    CONF_MANIFOLD,
    CONF_MAX_ITERS,
    CONF_MG,
    CONF_MIN_LEVEL,
    CONF_NU1,
    CONF_NU2,
    CONF_NU_SWEEP,
    CONF_OPERATOR,
    CONF_OUTPUT,
    CONF_PREFIX,
    CONF_PROBE_DENSITY,
    CONF_RHO_MAX,
    CONF_RHS,
    CONF_SEED,
    CONF_SERIES_TAIL_TOLERANCE,
    CONF_STUDY,
    CONF_TAU,
    CONF_THRESHOLDS,
    CONF_TRUNCATION,
    CONF_TRUNCATION_SWEEP,
    CONF_TWO_GRID,
    MANIFOLD_SPHERE,
    MANIFOLD_TORUS,
    RHS_MANUFACTURED,
    RHS_RANDOM,
    RHS_ZERO,
    STUDY_KINDS,
    StudyConfig,
)
from .exceptions import ConfigError

_LOGGER = logging.getLogger(__name__)

ENCODING = "utf-8"

_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_POSITIVE_INT = vol.All(int, vol.Range(min=1))
_FRACTION = vol.All(
    vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)
)


class StudyDefaults:
    """Load default options and thresholds from json files."""

    def __init__(self) -> None:
        """Initialize and read json files."""
        path = Path(__file__).parent / "config"
        with (path / "defaults.json").open("rb") as defaults_file:
            self.defaults: dict[str, Any] = orjson.loads(defaults_file.read())
        with (path / "thresholds.json").open("rb") as thresholds_file:
            self.thresholds: dict[str, Any] = orjson.loads(thresholds_file.read())

    def section(self, name: str) -> dict[str, Any]:
        """Return a copy of the defaults of one config section."""
        if name == CONF_THRESHOLDS:
            return copy.deepcopy(self.thresholds)
        return copy.deepcopy(self.defaults[name])

    def document(self) -> dict[str, Any]:
        """Return the complete default config document."""
        document = copy.deepcopy(self.defaults)
        document[CONF_THRESHOLDS] = copy.deepcopy(self.thresholds)
        return document

    def schema(self) -> vol.Schema:
        """Return the schema of a study config document."""
        kernel = self.section(CONF_KERNEL)
        operator = self.section(CONF_OPERATOR)
        hierarchy = self.section(CONF_HIERARCHY)
        mg = self.section(CONF_MG)
        study = self.section(CONF_STUDY)
        output = self.section(CONF_OUTPUT)
        thresholds = self.thresholds

        kernel_schema = vol.Schema(
            {
                vol.Optional(CONF_M, default=kernel[CONF_M]): vol.All(
                    int, vol.Range(min=3)
                ),
                vol.Optional(
                    CONF_SERIES_TAIL_TOLERANCE,
                    default=kernel[CONF_SERIES_TAIL_TOLERANCE],
                ): _FRACTION,
            }
        )
        operator_schema = vol.Schema(
            {
                vol.Optional(CONF_C, default=operator[CONF_C]): _POSITIVE_FLOAT,
                vol.Optional(CONF_C_MIN, default=operator[CONF_C_MIN]): _POSITIVE_FLOAT,
                vol.Optional(CONF_ADVECTION, default=operator[CONF_ADVECTION]): vol.Any(
                    None,
                    vol.All(
                        [vol.Coerce(float)], vol.Length(min=2, max=2, msg="expected 2")
                    ),
                ),
            }
        )
        hierarchy_schema = vol.Schema(
            {
                vol.Optional(CONF_LEVELS, default=hierarchy[CONF_LEVELS]): vol.All(
                    int, vol.Range(min=0)
                ),
                vol.Optional(CONF_BASE, default=hierarchy[CONF_BASE]): vol.All(
                    int, vol.Range(min=0)
                ),
                vol.Optional(
                    CONF_RHO_MAX, default=hierarchy[CONF_RHO_MAX]
                ): _POSITIVE_FLOAT,
                vol.Optional(
                    CONF_PROBE_DENSITY, default=hierarchy[CONF_PROBE_DENSITY]
                ): _POSITIVE_INT,
            }
        )
        mg_schema = vol.Schema(
            {
                vol.Optional(CONF_TAU, default=mg[CONF_TAU]): _POSITIVE_INT,
                vol.Optional(CONF_NU1, default=mg[CONF_NU1]): _POSITIVE_INT,
                vol.Optional(CONF_NU2, default=mg[CONF_NU2]): vol.All(
                    int, vol.Range(min=0)
                ),
                vol.Optional(CONF_EPS_MAX, default=mg[CONF_EPS_MAX]): _POSITIVE_FLOAT,
                vol.Optional(CONF_MAX_ITERS, default=mg[CONF_MAX_ITERS]): _POSITIVE_INT,
                vol.Optional(
                    CONF_GAMMA_TARGET, default=mg[CONF_GAMMA_TARGET]
                ): _FRACTION,
                vol.Optional(CONF_TRUNCATION, default=mg[CONF_TRUNCATION]): vol.Any(
                    None, _POSITIVE_FLOAT
                ),
                vol.Optional(CONF_TWO_GRID, default=mg[CONF_TWO_GRID]): bool,
            }
        )
        study_schema = vol.Schema(
            {
                vol.Optional(CONF_KIND, default=study[CONF_KIND]): vol.In(STUDY_KINDS),
                vol.Optional(CONF_NU_SWEEP, default=study[CONF_NU_SWEEP]): vol.All(
                    [_POSITIVE_INT], vol.Length(min=1)
                ),
                vol.Optional(
                    CONF_TRUNCATION_SWEEP, default=study[CONF_TRUNCATION_SWEEP]
                ): vol.All([_POSITIVE_FLOAT], vol.Length(min=1)),
                vol.Optional(
                    CONF_EXPLICIT_LIMIT, default=study[CONF_EXPLICIT_LIMIT]
                ): _POSITIVE_INT,
                vol.Optional(CONF_MIN_LEVEL, default=study[CONF_MIN_LEVEL]): vol.All(
                    int, vol.Range(min=1)
                ),
                vol.Optional(
                    CONF_CONVERGENCE_EPS, default=study[CONF_CONVERGENCE_EPS]
                ): _POSITIVE_FLOAT,
                vol.Optional(
                    CONF_COMPLEXITY_EPS, default=study[CONF_COMPLEXITY_EPS]
                ): _POSITIVE_FLOAT,
                vol.Optional(CONF_RHS, default=study[CONF_RHS]): vol.In(
                    (RHS_ZERO, RHS_RANDOM, RHS_MANUFACTURED)
                ),
            }
        )
        output_schema = vol.Schema(
            {
                vol.Optional(CONF_DIRECTORY, default=output[CONF_DIRECTORY]): str,
                vol.Optional(CONF_PREFIX, default=output[CONF_PREFIX]): str,
            }
        )
        thresholds_schema = vol.Schema(
            {
                vol.Optional(key, default=value): (
                    _POSITIVE_INT if isinstance(value, int) else _POSITIVE_FLOAT
                )
                for key, value in thresholds.items()
            }
        )
        return vol.Schema(
            {
                vol.Optional(
                    CONF_MANIFOLD, default=self.defaults[CONF_MANIFOLD]
                ): vol.In((MANIFOLD_TORUS, MANIFOLD_SPHERE)),
                vol.Optional(CONF_SEED, default=self.defaults[CONF_SEED]): vol.All(
                    int, vol.Range(min=0)
                ),
                vol.Optional(CONF_KERNEL, default={}): kernel_schema,
                vol.Optional(CONF_OPERATOR, default={}): operator_schema,
                vol.Optional(CONF_HIERARCHY, default={}): hierarchy_schema,
                vol.Optional(CONF_MG, default={}): mg_schema,
                vol.Optional(CONF_STUDY, default={}): study_schema,
                vol.Optional(CONF_OUTPUT, default={}): output_schema,
                vol.Optional(CONF_THRESHOLDS, default={}): thresholds_schema,
            },
            extra=vol.PREVENT_EXTRA,
        )


def _locate(text: str, path: list[Any]) -> int | None:
    """Return the line on which the last key of a path first appears."""
    position = -1
    for key in path:
        if not isinstance(key, str):
            continue
        found = text.find(f'"{key}"', max(position, 0))
        if found < 0:
            break
        position = found
    if position < 0:
        return None
    return text.count("\n", 0, position) + 1


def parse_study_config(raw: bytes | str) -> StudyConfig:
    """Parse and validate a study config document."""
    text = raw.decode(ENCODING) if isinstance(raw, bytes) else raw
    try:
        document = orjson.loads(text)
    except orjson.JSONDecodeError as err:
        raise ConfigError(err.msg, line=err.lineno, column=err.colno) from err
    if not isinstance(document, dict):
        raise ConfigError("config document must be a JSON object", line=1, column=1)
    try:
        validated = StudyDefaults().schema()(document)
    except vol.MultipleInvalid as err:
        error = err.errors[0]
        path = [str(key) for key in error.path]
        location = "/".join(path) or "<root>"
        raise ConfigError(
            f"{error.error_message} at {location}",
            line=_locate(text, list(error.path)),
            path=path,
        ) from err
    _LOGGER.debug("Validated study config: %s", validated)
    return cast(StudyConfig, validated)


def load_study_config(path: Path) -> StudyConfig:
    """Read and validate a study config file."""
    return parse_study_config(path.read_bytes())


def default_study_config() -> StudyConfig:
    """Return the validated default study config."""
    return parse_study_config(b"{}")
