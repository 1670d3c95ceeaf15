"""Exception types shared across the package."""


class RandCFError(Exception):
    """Base class for all package errors."""


class DomainError(RandCFError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class LengthError(RandCFError, ValueError):
    """Not enough digits were supplied for the requested operation."""


class ConfigurationError(RandCFError, ValueError):
    """Inconsistent or incomplete configuration (bad spec, missing inputs)."""


class PrecisionExhaustedError(RandCFError):
    """A high-precision real could not certify the requested number of digits."""


class PrecisionError(RandCFError):
    """A Monte Carlo estimate is too noisy to satisfy a required inequality."""


class InsufficientDataError(RandCFError):
    """Too few usable observations for an estimator."""


class CertificateError(RandCFError):
    """A Chernoff certificate failed its re-verification."""
