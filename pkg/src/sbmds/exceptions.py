"""Exception hierarchy shared across the package."""


class SBMDSError(Exception):
    """Base class for all package errors."""


class DimensionError(SBMDSError, ValueError):
    """Array shapes disagree (e.g. N of the dissimilarities vs the latent rows)."""


class ConfigurationError(SBMDSError, ValueError):
    """A coupling scheme or sampler setting is invalid."""


class DomainError(SBMDSError, ValueError):
    """A scalar parameter is outside its mathematical domain (e.g. sigma2 <= 0)."""


class ValidationError(SBMDSError, ValueError):
    """User supplied data failed validation (asymmetric, non-finite, ...)."""


class NumericalError(SBMDSError, RuntimeError):
    """A numerical routine failed (eigen-solver, non-finite state, ...)."""
