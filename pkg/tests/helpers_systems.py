"""Shared helpers for building small level systems and config files."""

from pathlib import Path

import numpy as np
import orjson

from kernel_multigrid.assembly import LevelSystem, select_damping


def make_system(matrix: np.ndarray, theta: float | None = None) -> LevelSystem:
    """Return a level system with B = diag(A) and the selected damping."""
    matrix = np.asarray(matrix, dtype=np.float64)
    system = LevelSystem(0, matrix, np.diag(matrix).copy())
    if theta is None:
        return system.with_damping(select_damping(system))
    return LevelSystem(0, matrix, np.diag(matrix).copy(), theta)


def write_config(directory: Path, document: dict) -> Path:
    """Write a study config document and return its path."""
    path = directory / "study.json"
    path.write_bytes(orjson.dumps(document))
    return path
