"""Helper methods for persisting hierarchies, matrices, caches and reports."""

from collections.abc import Iterable, Sequence
import csv
import io
import logging
import os
from pathlib import Path
from typing import Any

from atomicwrites import AtomicWriter
import numpy as np
import orjson
from scipy.io import mmwrite
from scipy.sparse import coo_array, issparse

from .exceptions import DomainError

_LOGGER = logging.getLogger(__name__)

BASIS_MAGIC = b"LAGB"
BASIS_VERSION = 1
MATRIX_MAGIC = b"DMAT"

BASIS_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("n", "<u4"),
        ("m", "<u4"),
        ("manifold", "u1"),
    ]
)
MATRIX_HEADER = np.dtype([("magic", "S4"), ("rows", "<u4"), ("cols", "<u4")])
MATRIX_CSV_COLUMNS = ("row", "col", "value")

JSON_OPTIONS = (
    orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_APPEND_NEWLINE
)


class WriteError(OSError):
    """Raised when an atomic file write fails."""


def write_file_atomic(path: Path, data: bytes) -> None:
    """Write bytes to a file atomically (temp file, then rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with AtomicWriter(os.fspath(path), mode="wb", overwrite=True).open() as fdesc:
            fdesc.write(data)
    except OSError as error:
        _LOGGER.exception("Saving file failed: %s", path)
        raise WriteError(error) from error
    _LOGGER.debug("Wrote %d bytes to %s", len(data), path)


def json_bytes(document: Any) -> bytes:
    """Serialize a document to indented JSON."""
    return orjson.dumps(document, option=JSON_OPTIONS)


def save_json(path: Path, document: Any) -> None:
    """Write a JSON document atomically."""
    write_file_atomic(path, json_bytes(document))


def load_json(path: Path) -> Any:
    """Read a JSON document."""
    return orjson.loads(path.read_bytes())


def _csv_cell(value: Any) -> str:
    """Format one CSV cell deterministically."""
    match value:
        case None:
            return ""
        case bool():
            return "true" if value else "false"
        case int() | np.integer():
            return str(int(value))
        case float() | np.floating():
            return repr(float(value))
        case _:
            return str(value)


def csv_text(columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> str:
    """Render rows as comma separated text with LF line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(column)) for column in columns])
    return buffer.getvalue()


def save_csv(
    path: Path, columns: Sequence[str], rows: Iterable[dict[str, Any]]
) -> None:
    """Write rows as UTF-8 CSV atomically."""
    write_file_atomic(path, csv_text(columns, rows).encode("utf-8"))


def basis_cache_bytes(coefficients: np.ndarray, m: int, manifold_tag: int) -> bytes:
    """Encode a Lagrange coefficient matrix in the LAGB cache format."""
    n = coefficients.shape[0]
    if coefficients.shape != (n, n):
        raise DomainError("Lagrange coefficients must be square")
    header = np.array([(BASIS_MAGIC, BASIS_VERSION, n, m, manifold_tag)], BASIS_HEADER)
    payload = np.ascontiguousarray(coefficients, dtype="<f8")
    return header.tobytes() + payload.tobytes()


def parse_basis_cache(data: bytes) -> tuple[np.ndarray, int, int]:
    """Decode a LAGB cache into (coefficients, m, manifold tag)."""
    if len(data) < BASIS_HEADER.itemsize:
        raise DomainError("Basis cache is truncated")
    header = np.frombuffer(data, BASIS_HEADER, count=1)[0]
    if bytes(header["magic"]) != BASIS_MAGIC:
        raise DomainError("Basis cache has a wrong magic number")
    if int(header["version"]) != BASIS_VERSION:
        raise DomainError(f"Unsupported basis cache version {int(header['version'])}")
    n = int(header["n"])
    payload = np.frombuffer(data, "<f8", offset=BASIS_HEADER.itemsize)
    if payload.size != n * n:
        raise DomainError("Basis cache payload does not match its header")
    return (
        payload.reshape(n, n).astype(np.float64),
        int(header["m"]),
        int(header["manifold"]),
    )


def dense_matrix_bytes(matrix: np.ndarray) -> bytes:
    """Encode a dense matrix in the DMAT format."""
    matrix = np.atleast_2d(matrix)
    rows, cols = matrix.shape
    header = np.array([(MATRIX_MAGIC, rows, cols)], MATRIX_HEADER)
    return header.tobytes() + np.ascontiguousarray(matrix, dtype="<f8").tobytes()


def parse_dense_matrix(data: bytes) -> np.ndarray:
    """Decode a DMAT encoded dense matrix."""
    header = np.frombuffer(data, MATRIX_HEADER, count=1)[0]
    if bytes(header["magic"]) != MATRIX_MAGIC:
        raise DomainError("Dense matrix file has a wrong magic number")
    rows, cols = int(header["rows"]), int(header["cols"])
    payload = np.frombuffer(data, "<f8", offset=MATRIX_HEADER.itemsize)
    if payload.size != rows * cols:
        raise DomainError("Dense matrix payload does not match its header")
    return payload.reshape(rows, cols).astype(np.float64)


def matrix_market_bytes(matrix: Any) -> bytes:
    """Encode a sparse or dense matrix in Matrix Market coordinate format."""
    if not issparse(matrix):
        matrix = coo_array(np.atleast_2d(matrix))
    buffer = io.BytesIO()
    mmwrite(buffer, matrix, symmetry="general")
    return buffer.getvalue()


def matrix_triplets(matrix: Any) -> list[dict[str, Any]]:
    """Return the non-zero entries of a sparse or dense matrix as row, col, value."""
    entries = coo_array(matrix if issparse(matrix) else np.atleast_2d(matrix))
    entries.sum_duplicates()
    return [
        {"row": int(row), "col": int(col), "value": float(value)}
        for row, col, value in zip(entries.row, entries.col, entries.data, strict=True)
    ]


def save_matrix_csv(path: Path, matrix: Any) -> None:
    """Write the non-zero entries of a matrix as row,col,value CSV."""
    save_csv(path, MATRIX_CSV_COLUMNS, matrix_triplets(matrix))
