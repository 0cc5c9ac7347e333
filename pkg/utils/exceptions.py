"""
Custom exceptions for structured error reporting
"""
from typing import Optional, Sequence


class InversionException(Exception):
    """Base exception for the inversion library"""
    def __init__(self, message: str, code: str = "INVERSION_ERROR"):
        self.message = message
        self.code = code
        super().__init__(self.message)


class DimensionMismatchError(InversionException):
    """Array shapes that do not fit together"""
    def __init__(self, message: str):
        super().__init__(message, "DIMENSION_MISMATCH")


class SingularMatrixError(InversionException):
    """Numerically singular matrix met in a solve"""
    def __init__(self, message: str, stage: Optional[int] = None):
        self.stage = stage
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message, "SINGULAR_MATRIX")


class NotPositiveDefiniteError(InversionException):
    """Matrix expected symmetric positive definite"""
    def __init__(self, message: str):
        super().__init__(message, "NOT_POSITIVE_DEFINITE")


class SizeGuardError(InversionException):
    """Dense oracle construction refused because it would be too large"""
    def __init__(self, message: str):
        super().__init__(message, "SIZE_GUARD")


class InsufficientSamplesError(InversionException):
    """Not enough samples for a well-posed estimate"""
    def __init__(self, message: str):
        super().__init__(message, "INSUFFICIENT_SAMPLES")


class RankDeficientError(InversionException):
    """Least-squares design matrix without full column rank"""
    def __init__(self, message: str, columns: Sequence[int] = ()):
        self.columns = list(columns)
        super().__init__(f"{message} (deficient columns: {self.columns})", "RANK_DEFICIENT")


class DegeneracyError(InversionException):
    """Every particle weight vanished"""
    def __init__(self, message: str = "All particle weights are zero", trace: Optional[list] = None):
        self.trace = trace or []
        super().__init__(message, "WEIGHT_DEGENERACY")


class ConfigurationError(InversionException):
    """Inconsistent configuration or parameter"""
    def __init__(self, message: str):
        super().__init__(message, "CONFIG_ERROR")
