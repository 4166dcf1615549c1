"""Tests for file formats and atomic writes."""

from pathlib import Path

import numpy as np
import pytest
from scipy.sparse import csr_array

from kernel_multigrid.exceptions import DomainError
from kernel_multigrid.helpers import (
    basis_cache_bytes,
    csv_text,
    dense_matrix_bytes,
    load_json,
    matrix_market_bytes,
    matrix_triplets,
    parse_basis_cache,
    parse_dense_matrix,
    save_json,
    save_matrix_csv,
    write_file_atomic,
)


def test_write_file_atomic_creates_directories(tmp_path: Path) -> None:
    """Missing parent directories are created."""
    path = tmp_path / "a" / "b" / "data.bin"
    write_file_atomic(path, b"abc")
    assert path.read_bytes() == b"abc"
    write_file_atomic(path, b"xyz")
    assert path.read_bytes() == b"xyz"


def test_json_documents(tmp_path: Path) -> None:
    """Numpy arrays serialize as lists."""
    path = tmp_path / "doc.json"
    save_json(path, {"values": np.arange(3.0), "ok": True})
    assert load_json(path) == {"values": [0.0, 1.0, 2.0], "ok": True}


def test_csv_cells() -> None:
    """Booleans, missing values and floats have fixed spellings."""
    text = csv_text(
        ["level", "passed", "value", "note"],
        [{"level": np.int64(2), "passed": True, "value": 0.1}],
    )
    assert text == "level,passed,value,note\n2,true,0.1,\n"


def test_dense_matrix_format() -> None:
    """DMAT stores shape and little-endian doubles."""
    matrix = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    data = dense_matrix_bytes(matrix)
    assert data[:4] == b"DMAT"
    assert len(data) == 12 + 6 * 8
    np.testing.assert_array_equal(parse_dense_matrix(data), matrix)
    with pytest.raises(DomainError):
        parse_dense_matrix(b"XMAT" + data[4:])
    with pytest.raises(DomainError):
        parse_dense_matrix(data[:-8])


def test_basis_cache_format() -> None:
    """LAGB caches carry the kernel order and the manifold tag."""
    coefficients = np.arange(4.0).reshape(2, 2)
    decoded, m, tag = parse_basis_cache(basis_cache_bytes(coefficients, 3, 1))
    np.testing.assert_array_equal(decoded, coefficients)
    assert (m, tag) == (3, 1)


@pytest.mark.parametrize("data", [b"LAG", b"XXXX" + bytes(13)])
def test_broken_basis_cache(data: bytes) -> None:
    """Truncated caches and foreign files are refused."""
    with pytest.raises(DomainError):
        parse_basis_cache(data)


def test_basis_cache_needs_square_coefficients() -> None:
    """Coefficient matrices are square."""
    with pytest.raises(DomainError):
        basis_cache_bytes(np.ones((2, 3)), 3, 0)


def test_matrix_market_output() -> None:
    """Sparse and dense matrices are written as general coordinate files."""
    sparse = matrix_market_bytes(csr_array(np.eye(3)))
    assert sparse.startswith(b"%%MatrixMarket matrix coordinate real general")
    dense = matrix_market_bytes(np.eye(3))
    assert dense.startswith(b"%%MatrixMarket matrix coordinate real general")


def test_matrix_csv_lists_the_non_zero_entries(tmp_path: Path) -> None:
    """Sparse and dense matrices give the same row-major triplets."""
    matrix = np.array([[0.0, 2.5], [-1.0, 0.0]])
    expected = [
        {"row": 0, "col": 1, "value": 2.5},
        {"row": 1, "col": 0, "value": -1.0},
    ]
    assert matrix_triplets(matrix) == expected
    assert matrix_triplets(csr_array(matrix)) == expected
    path = tmp_path / "m.csv"
    save_matrix_csv(path, matrix)
    assert path.read_text() == "row,col,value\n0,1,2.5\n1,0,-1.0\n"
