"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FPIndexError(Exception):
    """Base class for all package errors."""


class ParameterError(FPIndexError, ValueError):
    """An argument is outside its valid range or has the wrong shape."""


class FormatError(FPIndexError):
    """A file does not follow the expected on-disk layout."""


class TrainingError(FPIndexError):
    """Training data cannot support the requested model."""


class EmptyTemplateError(FPIndexError):
    """No usable minutiae remain for a fingerprint."""


class DegenerateVectorError(FPIndexError):
    """The index vector cannot be normalized (uniform memberships)."""


class OutOfBoundsError(FPIndexError):
    """A sampling point's kernel support leaves the image."""

    def __init__(self, point_index: int, message: str | None = None):
        self.point_index = point_index
        super().__init__(message or f"sampling point {point_index} too close to image border")


class ConflictError(FPIndexError):
    """A subject id is already enrolled."""


class UnknownSubjectError(FPIndexError, KeyError):
    """A subject id is not present in the gallery."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown subject"


class EvaluationError(FPIndexError):
    """Evaluation inputs are inconsistent with the gallery."""
