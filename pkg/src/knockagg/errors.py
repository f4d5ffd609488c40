"""Exception types raised across the package.

Everything deliberate derives from KnockaggError so callers (and the CLI)
can separate expected failures from genuine bugs.
"""


class KnockaggError(Exception):
    """Base class for all errors raised deliberately by this package."""


class InvalidInputError(KnockaggError, ValueError):
    """An argument fails a documented precondition (shape, finiteness, range)."""


class SingularDesignError(KnockaggError, ValueError):
    """A design or Gram matrix is numerically rank deficient."""


class InsufficientRowsError(KnockaggError, ValueError):
    """Too few rows for the requested construction (knockoffs need n >= 2p)."""


class DegenerateFeatureError(KnockaggError, ValueError):
    """A feature column has zero (or near-zero) norm and cannot be normalized."""


class NotPositiveSemidefiniteError(KnockaggError, ValueError):
    """A matrix that must be PSD has an eigenvalue below the tolerance floor."""


class ConvergenceError(KnockaggError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class ProtocolError(KnockaggError, ValueError):
    """A wire message violates the format (magic, version, mode, field values)."""


class MessageLengthError(ProtocolError):
    """A wire message or stream is truncated or has trailing bytes."""


class ConfigError(KnockaggError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class InvalidConfidenceError(ConfigError):
    """A confidence function violates its contract (monotone, 1 at 0, 0 at 1)."""
