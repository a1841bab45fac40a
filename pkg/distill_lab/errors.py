"""
Error types for the distillation lab.

Every failure the library signals is a LabError subclass with a stable
machine-readable code, so the CLI and the tool server can report it as the
same {"success": False, "error": ...} record.
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for all laboratory errors."""

    code = "lab_error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_record(self) -> Dict[str, Any]:
        """Return the failure record printed by the CLI and returned by tools."""
        return {
            "success": False,
            "error": self.code,
            "message": self.message,
            "details": self.details,
        }


class ZeroNorm(LabError):
    code = "zero_norm"


class DimensionMismatch(LabError):
    code = "dimension_mismatch"


# Parameter/gradient shape errors share the dimension check
ShapeMismatch = DimensionMismatch


class NonFinite(LabError):
    code = "non_finite"


class LabelOutOfRange(LabError):
    code = "label_out_of_range"


class InvalidSpec(LabError):
    code = "invalid_spec"


class InvalidArgument(LabError):
    code = "invalid_argument"


class StaleCache(LabError):
    code = "stale_cache"


class InvalidBatchSize(LabError):
    code = "invalid_batch_size"


class InsufficientSamples(LabError):
    code = "insufficient_samples"


class IndexOutOfRange(LabError):
    code = "index_out_of_range"


class EmptyScores(LabError):
    code = "empty_scores"


class EmptyGallery(LabError):
    code = "empty_gallery"


class DivergedRun(LabError):
    code = "diverged_run"


class ConfigError(LabError):
    code = "config_error"


class UnreliableFarWarning(UserWarning):
    """FAR target below the resolution of the impostor list: not even one impostor may be accepted."""


def error_record(exc: BaseException) -> Dict[str, Any]:
    """
    Failure record for any exception.

    LabErrors keep their own code; OSErrors map to "io_error" and everything
    else to "internal_error", so callers never see a raw traceback.
    """
    if isinstance(exc, LabError):
        return exc.to_record()
    details: Dict[str, Any] = {"type": type(exc).__name__}
    if isinstance(exc, OSError):
        if exc.filename is not None:
            details["path"] = str(exc.filename)
        code = "io_error"
    else:
        code = "internal_error"
    return {"success": False, "error": code, "message": str(exc) or type(exc).__name__, "details": details}
