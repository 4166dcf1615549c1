"""Common fixtures for the kernel multigrid tests."""

from pathlib import Path

import pytest

from kernel_multigrid.assembly import EllipticOperator
from kernel_multigrid.geometry import (
    FLAT_TORUS,
    UNIT_SPHERE,
    PointHierarchy,
    build_hierarchy,
)
from kernel_multigrid.kernelspace import SpectralKernel
from kernel_multigrid.multigrid import LevelStack, build_stack, stack_kernel


@pytest.fixture(scope="session")
def torus_hierarchy() -> PointHierarchy:
    """Torus grids with 16, 64 and 256 points."""
    return build_hierarchy(FLAT_TORUS, 2, 4)


@pytest.fixture(scope="session")
def torus_kernel(torus_hierarchy: PointHierarchy) -> SpectralKernel:
    """Kernel of smoothness 3 resolved for the finest torus level."""
    return stack_kernel(torus_hierarchy, 3, 1e-12)


@pytest.fixture(scope="session")
def torus_stack(
    torus_hierarchy: PointHierarchy, torus_kernel: SpectralKernel
) -> LevelStack:
    """Dense stack of -Laplace + 1 on the torus grids."""
    return build_stack(torus_hierarchy, torus_kernel, EllipticOperator())


@pytest.fixture(scope="session")
def fine_torus_stack() -> LevelStack:
    """Dense stack on torus grids with 64 and 256 points, all with h < 1."""
    hierarchy = build_hierarchy(FLAT_TORUS, 1, 8)
    return build_stack(hierarchy, stack_kernel(hierarchy, 3, 1e-12), EllipticOperator())


@pytest.fixture(scope="session")
def sphere_hierarchy() -> PointHierarchy:
    """Icosahedron vertices and their first subdivision."""
    return build_hierarchy(UNIT_SPHERE, 1, 0)


@pytest.fixture(scope="session")
def sphere_stack(sphere_hierarchy: PointHierarchy) -> LevelStack:
    """Dense stack of -Laplace-Beltrami + 1 on the sphere."""
    kernel = stack_kernel(sphere_hierarchy, 3, 1e-12)
    return build_stack(sphere_hierarchy, kernel, EllipticOperator())


@pytest.fixture
def study_document(tmp_path: Path) -> dict:
    """Return a small torus study config writing into tmp_path."""
    return {
        "manifold": "torus",
        "hierarchy": {"levels": 2, "base": 4},
        "study": {
            "nu_sweep": [2, 4],
            "truncation_sweep": [2.0, 4.0],
            "min_level": 1,
        },
        "output": {"directory": str(tmp_path / "out"), "prefix": "t"},
    }
