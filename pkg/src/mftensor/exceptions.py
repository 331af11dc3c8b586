"""Exception hierarchy shared across the package."""


class MFTensorError(Exception):
    """Base class for all package errors."""


class DimensionError(MFTensorError, ValueError):
    """Shapes, mode indices or ranks are inconsistent."""


class DegenerateInputError(MFTensorError, ValueError):
    """Input carries no usable signal (e.g. an all-zero tensor)."""


class DomainError(MFTensorError, ValueError):
    """A value lies outside the domain an operation accepts."""


class NumericError(MFTensorError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class FactorizationError(NumericError):
    """A covariance matrix could not be factorized even after jitter escalation."""


class SamplingError(MFTensorError, RuntimeError):
    """The MCMC sampler hit an invalid log density."""


class DiagnosticError(MFTensorError, ValueError):
    """Not enough draws to compute a diagnostic."""


class FitError(MFTensorError, RuntimeError):
    """Fitting an emulator failed."""


class NotFittedError(MFTensorError, RuntimeError):
    """A model was used before it was fitted."""


class FormatError(MFTensorError, ValueError):
    """An on-disk artifact is malformed."""


class ConfigError(MFTensorError, ValueError):
    """A run configuration is invalid."""


class ContractError(MFTensorError, ValueError):
    """An input violates a structural precondition (e.g. non-orthonormal factors)."""
