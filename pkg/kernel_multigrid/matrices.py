"""Compressed-row matrices, FLOP ledgers and matrix-type agnostic products."""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.sparse import csr_array, issparse
from scipy.sparse.linalg import svds

from .const import EXPLICIT_LIMIT
from .exceptions import DimensionError, DomainError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed-row matrix with strictly increasing columns in each row."""

    matrix: csr_array

    def __post_init__(self) -> None:
        """Validate the compressed-row layout."""
        matrix = self.matrix
        if not isinstance(matrix, csr_array):
            matrix = csr_array(matrix)
            object.__setattr__(self, "matrix", matrix)
        if not matrix.has_sorted_indices:
            raise DomainError("Column indices must be sorted within each row")
        if matrix.nnz != matrix.data.size:
            raise DomainError("Number of stored entries does not match the values")

    @classmethod
    def from_arrays(
        cls,
        values: np.ndarray,
        rows: np.ndarray,
        cols: np.ndarray,
        shape: tuple[int, int],
    ) -> "SparseMatrix":
        """Build from row-major sorted coordinate triplets."""
        indptr = np.zeros(shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=shape[0]), out=indptr[1:])
        return cls(csr_array((values, cols.astype(np.int64), indptr), shape=shape))

    @property
    def shape(self) -> tuple[int, int]:
        """Return (rows, cols)."""
        return self.matrix.shape

    @property
    def rows(self) -> int:
        """Return the number of rows."""
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        """Return the number of columns."""
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        """Return the number of stored entries."""
        return self.matrix.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        """Return the row offsets into the value array."""
        return self.matrix.indptr

    @property
    def column_indices(self) -> np.ndarray:
        """Return the column index of every stored value."""
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        """Return the stored values."""
        return self.matrix.data

    def to_dense(self) -> np.ndarray:
        """Return the dense matrix."""
        return self.matrix.toarray()

    def transpose(self) -> "SparseMatrix":
        """Return the transpose in compressed-row layout."""
        transposed = csr_array(self.matrix.T)
        transposed.sort_indices()
        return SparseMatrix(transposed)

    def diagonal(self) -> np.ndarray:
        """Return the main diagonal."""
        return self.matrix.diagonal()


@dataclass(slots=True)
class FlopLedger:
    """Floating point operation count of one solve."""

    multiply_adds: int = 0

    def add(self, count: int) -> None:
        """Add operations to the ledger."""
        self.multiply_adds += int(count)

    def merge(self, other: "FlopLedger") -> None:
        """Add the count of another ledger."""
        self.multiply_adds += other.multiply_adds


Matrix = np.ndarray | SparseMatrix


def _columns(vector: np.ndarray) -> int:
    """Return the number of right-hand sides stacked in a vector argument."""
    return 1 if vector.ndim == 1 else vector.shape[1]


def sparse_matvec(
    matrix: SparseMatrix, vector: np.ndarray, ledger: FlopLedger | None = None
) -> np.ndarray:
    """Return M x and add 2 nnz per right-hand side to the ledger."""
    if vector.shape[0] != matrix.cols:
        raise DimensionError(
            f"Matrix has {matrix.cols} columns, vector has {vector.shape[0]} rows"
        )
    if ledger is not None:
        ledger.add(2 * matrix.nnz * _columns(vector))
    return matrix.matrix @ vector


def matvec(
    matrix: Matrix, vector: np.ndarray, ledger: FlopLedger | None = None
) -> np.ndarray:
    """Return M x for dense or compressed-row M, counting operations."""
    if isinstance(matrix, SparseMatrix):
        return sparse_matvec(matrix, vector, ledger)
    if vector.shape[0] != matrix.shape[1]:
        raise DimensionError(
            f"Matrix has {matrix.shape[1]} columns, vector has {vector.shape[0]} rows"
        )
    if ledger is not None:
        ledger.add(2 * matrix.shape[0] * matrix.shape[1] * _columns(vector))
    return matrix @ vector


def stored_entries(matrix: Matrix) -> int:
    """Return the number of stored entries."""
    if isinstance(matrix, SparseMatrix):
        return matrix.nnz
    return int(matrix.size)


def dense(matrix: Matrix) -> np.ndarray:
    """Return a dense copy or view of a matrix."""
    if isinstance(matrix, SparseMatrix):
        return matrix.to_dense()
    if issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix)


def diagonal(matrix: Matrix) -> np.ndarray:
    """Return the main diagonal as a new array."""
    if isinstance(matrix, SparseMatrix):
        return matrix.diagonal()
    return np.diag(matrix).copy()


def absolute_matvec(matrix: Matrix, x: np.ndarray) -> np.ndarray:
    """Return |M| x with |M| the entrywise absolute value."""
    if isinstance(matrix, SparseMatrix):
        return np.asarray(abs(matrix.matrix) @ x)
    return np.abs(np.asarray(matrix)) @ x


def transpose(matrix: Matrix) -> Matrix:
    """Return the transpose keeping the storage type."""
    if isinstance(matrix, SparseMatrix):
        return matrix.transpose()
    return np.ascontiguousarray(matrix.T)


def symmetric_part(matrix: Matrix) -> Matrix:
    """Return (M + M^T) / 2 keeping the storage type."""
    if isinstance(matrix, SparseMatrix):
        part = csr_array((matrix.matrix + matrix.matrix.T) / 2.0)
        part.sort_indices()
        return SparseMatrix(part)
    return (matrix + matrix.T) / 2.0


def spectral_norm(matrix: Matrix, dense_limit: int = EXPLICIT_LIMIT) -> float:
    """Return the largest singular value."""
    if min(matrix.shape) == 0:
        return 0.0
    if max(matrix.shape) <= dense_limit or min(matrix.shape) < 3:
        return float(np.linalg.norm(dense(matrix), 2))
    operand = matrix.matrix if isinstance(matrix, SparseMatrix) else matrix
    singular = svds(
        operand, k=1, v0=np.ones(min(matrix.shape)), return_singular_vectors=False
    )
    return float(singular[0])
