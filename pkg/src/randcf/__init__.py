"""Random continued fractions: Lévy constants and Chernoff-type deviation bounds."""

from .errors import (
    CertificateError,
    ConfigurationError,
    DomainError,
    InsufficientDataError,
    LengthError,
    PrecisionError,
    PrecisionExhaustedError,
)

__version__ = "0.1.0"

__all__ = [
    "CertificateError",
    "ConfigurationError",
    "DomainError",
    "InsufficientDataError",
    "LengthError",
    "PrecisionError",
    "PrecisionExhaustedError",
]
