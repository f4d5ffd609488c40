"""Communication-efficient FDR control from decentralized linear models.

Each node runs the knockoff filter on its own design and response, keeps
only a sign bit and one ordering statistic per feature, and ships those to
a coordinator. The coordinator turns the sign counts into binomial
p-values and runs a weighted sequential selection rule whose weighted
false discovery rate is controlled at a user-chosen level.
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateFeatureError,
    InsufficientRowsError,
    InvalidConfidenceError,
    InvalidInputError,
    KnockaggError,
    MessageLengthError,
    NotPositiveSemidefiniteError,
    ProtocolError,
    SingularDesignError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DegenerateFeatureError",
    "InsufficientRowsError",
    "InvalidConfidenceError",
    "InvalidInputError",
    "KnockaggError",
    "MessageLengthError",
    "NotPositiveSemidefiniteError",
    "ProtocolError",
    "SingularDesignError",
    "__version__",
]
