"""
Exception types raised by the adaptive error-bound toolkit
"""

from typing import Optional


class AdaptiveEBError(Exception):
    """Base class for every error raised on purpose by this package"""


class FieldFormatError(AdaptiveEBError):
    """Raw field file has a bad magic or an unknown dtype code"""


class FieldLengthError(AdaptiveEBError):
    """Raw field payload does not match the declared dimensions"""


class NonFiniteValueError(AdaptiveEBError):
    """A field contains NaN or infinite values"""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class DecodeError(AdaptiveEBError):
    """Compressed block or archive is corrupted"""


class CalibrationError(AdaptiveEBError):
    """Rate model cannot be calibrated from the supplied data"""


class InfeasiblePlanError(AdaptiveEBError):
    """Quality budget cannot be met inside the error-bound clamps"""


class ErrorBoundViolation(AdaptiveEBError):
    """Reconstruction error exceeds the error bound"""


class StageFailure(AdaptiveEBError):
    """A pipeline stage raised; ``stage`` names it"""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage} failed: {reason}")
        self.stage = stage
        self.reason = reason
