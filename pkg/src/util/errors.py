# util/errors.py

from typing import Any, Dict, Optional


class PdmdError(Exception):
    """Base class for every error raised by the parametric DMD toolkit."""


class InvalidInputError(PdmdError, ValueError):
    """Raised when an argument violates an operation's preconditions."""


class NumericalFailureError(PdmdError, ArithmeticError):
    """
    Raised when a numerical procedure fails to produce a trustworthy result.

    The `diagnostics` dictionary carries whatever the failing routine knew at
    the time (iteration counts, residual histories, step sizes).
    """
    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficiencyError(NumericalFailureError):
    """Raised when a requested rank exceeds the numerically positive singular values."""
    def __init__(self, message: str, index: int, series: Optional[int] = None):
        super().__init__(message, {"index": index, "series": series})
        self.index = index
        self.series = series


class ResourceError(PdmdError, MemoryError):
    """Raised when an operation would exceed a configured resource cap."""
    def __init__(self, message: str, cap: int):
        super().__init__(message)
        self.cap = cap


class SnapshotIOError(PdmdError, OSError):
    """Raised when a snapshot, manifest or model file cannot be read or written."""
    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path


class SnapshotFormatError(PdmdError, ValueError):
    """Raised for malformed snapshot, manifest or model files."""


class CorruptionError(SnapshotFormatError):
    """Raised when a checksum does not match the file contents."""


class UndefinedMetricError(PdmdError, ArithmeticError):
    """Raised when an error metric is undefined for its inputs."""


# --- Warning categories ---

class DefectiveEigenbasisWarning(UserWarning):
    pass


class EigenCrossingWarning(UserWarning):
    pass


class ExtrapolationWarning(UserWarning):
    pass


class ImaginaryResidueWarning(UserWarning):
    pass


class TimerResolutionWarning(UserWarning):
    pass


class ParameterRangeWarning(UserWarning):
    pass


class StabilityWarning(UserWarning):
    pass
