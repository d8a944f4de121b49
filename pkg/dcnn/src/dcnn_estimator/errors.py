"""Error taxonomy shared across the package.

Exit-code mapping mirrors the channel toolkit CLI so the two command-line
tools compose predictably in scripts: 0 success, 1 usage, 2 data/validation,
3 pipeline/numerical failure.
"""

from __future__ import annotations


class DcnnError(Exception):
    """Base class for all package errors."""


class UsageError(DcnnError):
    """Command invoked incorrectly (exit code 1)."""


class DataError(DcnnError):
    """Dataset, manifest, checkpoint, or schema inconsistency (exit code 2).

    Carries the offending field/location in `field` when known.
    """

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field

    def __str__(self) -> str:  # pragma: no cover - trivial formatting
        base = super().__str__()
        return f"{self.field}: {base}" if self.field else base


class PipelineError(DcnnError):
    """Training or downstream-CLI failure (exit code 3)."""
