"""Error taxonomy shared across the toolkit.

Exit-code mapping used by the CLI: usage errors -> 1, validation errors -> 2,
numerical/geometry failures -> 3.
"""


class HspmError(Exception):
    """Base class for all toolkit errors."""


class UsageError(HspmError):
    """Malformed command line (bad flag, missing subcommand)."""


class InvalidArgumentError(HspmError, ValueError):
    """An argument violates a documented precondition."""


class ValidationError(HspmError, ValueError):
    """Schema/range violation in a file or config; names the offending field."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DegenerateGeometryError(HspmError):
    """A geometric construction is ill-posed; names the vanishing quantity."""

    def __init__(self, message: str, denominator: str | None = None):
        self.denominator = denominator
        if denominator is not None:
            message = f"{message} (vanishing: {denominator})"
        super().__init__(message)


class NoSpecularPathError(HspmError):
    """Endpoints do not admit a single-bounce specular reflection."""


class NumericalFailureError(HspmError):
    """A numeric routine failed (singular least squares, NaN, ...)."""


class ConvergenceError(NumericalFailureError):
    """Iterative solver exhausted its budget; carries the final residual."""

    def __init__(self, message: str, residual: float | None = None,
                 iterations: int | None = None):
        self.residual = residual
        self.iterations = iterations
        if residual is not None:
            message = f"{message} (residual={residual:.3e}, iterations={iterations})"
        super().__init__(message)


class SingularSystemError(NumericalFailureError):
    """Jacobian/system matrix is numerically singular."""
