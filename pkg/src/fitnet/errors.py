"""Exception types shared across the package.

Each category maps to a distinct CLI exit code (see cli.py), so callers can
tell a bad config apart from bad data or a numeric blow-up.
"""


class FitnetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FitnetError):
    """Tensor or parameter shapes do not line up."""


class DomainError(FitnetError):
    """An input is outside the documented domain (e.g. empty softmax)."""


class ContractError(FitnetError):
    """An API precondition was violated by the caller."""


class NumericError(FitnetError):
    """NaN or Inf appeared where only finite values are admitted."""


class ConfigError(FitnetError):
    """Invalid or inconsistent configuration."""


class ParseError(FitnetError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CacheError(FitnetError):
    """Base class for preprocessed-cache failures."""


class CacheVersionError(CacheError):
    """Cache was written by an incompatible format version."""


class CorruptionError(CacheError):
    """Cache payload failed its integrity checks."""
