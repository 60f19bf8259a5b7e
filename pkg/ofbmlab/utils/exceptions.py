"""
Exception family for ofbmlab.

Every error derives from ``ValueError`` so that callers catching ``ValueError``
keep working; the subclasses let the CLI map failures to exit codes.
"""


class OfbmLabError(ValueError):
    """Base class of all library errors."""


class DomainError(OfbmLabError):
    """An argument lies outside the mathematical domain of an operation."""


class InputError(OfbmLabError):
    """Malformed or non-finite input data."""


class ModelDomainError(OfbmLabError):
    """Spectral bounds of an exponent fall outside the admissible box."""


class ContractError(OfbmLabError):
    """A functional violates the mean-zero contract of the path operators."""


class EvaluationError(OfbmLabError):
    """A functional produced non-finite values at quadrature nodes."""


class RankUndeterminedError(OfbmLabError):
    """No coefficient exceeds the tolerance up to the truncation order."""


class SynthesisError(OfbmLabError):
    """Circulant embedding lost too much spectral mass to clipping."""


class AccuracyError(OfbmLabError):
    """A quadrature failed to converge within its refinement limit."""


class ConfigError(OfbmLabError):
    """An experiment configuration could not be parsed or validated."""
