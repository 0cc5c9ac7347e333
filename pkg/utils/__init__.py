"""Utilities module"""
from .logger import setup_logger
from .exceptions import *

__all__ = [
    'setup_logger',
    'InversionException',
    'DimensionMismatchError',
    'SingularMatrixError',
    'NotPositiveDefiniteError',
    'SizeGuardError',
    'InsufficientSamplesError',
    'RankDeficientError',
    'DegeneracyError',
    'ConfigurationError',
]
