"""
Exception hierarchy for cwce-lab.
Every error raised on purpose by the library derives from CwceLabError.
"""


class CwceLabError(Exception):
    """Base class for all library errors."""


class ParameterValidationError(CwceLabError, ValueError):
    """Structural causal model parameters violate their invariants."""


class DimensionError(CwceLabError, ValueError):
    """Array lengths or time indices do not line up."""


class NumericalSingularityError(CwceLabError, ArithmeticError):
    """A covariance block stayed singular after the full jitter ladder."""


class DomainError(CwceLabError, ValueError):
    """Arguments fall outside the mathematical domain of an operation."""


class UnsupportedCombinationError(CwceLabError, ValueError):
    """The requested measure or query is not defined for this model kind."""


class UnsupportedQueryError(CwceLabError, ValueError):
    """The query needs a mode that was not switched on (e.g. future times)."""


class IdentifiabilityError(CwceLabError, ValueError):
    """The design matrix cannot identify a fixed or random effect."""


class RankDeficiencyError(CwceLabError, ValueError):
    """Least-squares design is rank deficient."""


class NonConvergedFitError(CwceLabError, RuntimeError):
    """A REML fit that did not converge was used for plug-in inference."""


class ConfigurationError(CwceLabError, ValueError):
    """Experiment configuration is invalid or unreadable."""


class ValidationFailure(CwceLabError, AssertionError):
    """An oracle comparison breached its tolerance."""
