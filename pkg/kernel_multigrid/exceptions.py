"""Errors raised by the kernel multigrid solver."""


class KernelMultigridError(Exception):
    """Base class for all errors of the solver."""


class DomainError(KernelMultigridError):
    """Raised when an input lies outside the domain of an operation."""


class CapacityError(KernelMultigridError):
    """Raised when a construction exceeds the memory or size guard."""


class ConditioningError(KernelMultigridError):
    """Raised when a matrix factorization fails numerically."""

    def __init__(self, message: str, smallest_pivot: float | None = None) -> None:
        """Initialize with the smallest pivot seen by the factorization."""
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class InsufficientDataError(KernelMultigridError):
    """Raised when a fit has too few usable samples."""


class UnsupportedOperatorError(KernelMultigridError):
    """Raised when an elliptic operator cannot be assembled spectrally."""


class DimensionError(KernelMultigridError, ValueError):
    """Raised when vector or matrix dimensions do not match."""


class ConfigError(KernelMultigridError):
    """Raised when a study configuration document is invalid."""

    def __init__(
        self,
        message: str,
        line: int | None = None,
        column: int | None = None,
        path: list[str] | None = None,
    ) -> None:
        """Initialize with the location of the problem in the document."""
        super().__init__(message)
        self.line = line
        self.column = column
        self.path = path or []

    def __str__(self) -> str:
        """Return the message prefixed with the document location."""
        message = super().__str__()
        if self.line is not None and self.column is not None:
            return f"line {self.line}, column {self.column}: {message}"
        if self.line is not None:
            return f"line {self.line}: {message}"
        return message
