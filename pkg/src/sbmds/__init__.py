"""Sparse Bayesian multidimensional scaling."""

from .core import (
    CouplingScheme,
    DissimMatrix,
    LatentConfig,
    TruncatedNormalParams,
    log_std_normal_cdf,
    pairwise_distances,
    sample_truncated_normal,
    truncated_normal_logpdf,
)
from .estimator import BayesianMDS
from .exceptions import (
    ConfigurationError,
    DimensionError,
    DomainError,
    NumericalError,
    SBMDSError,
    ValidationError,
)
from .likelihood import SparseLikelihood, grad_log_likelihood, log_likelihood
from .samplers import PriorSpec, SamplerConfig, Trace, read_trace, run_chain

__version__ = "0.1.0"

__all__ = [
    "BayesianMDS",
    "ConfigurationError",
    "CouplingScheme",
    "DimensionError",
    "DissimMatrix",
    "DomainError",
    "LatentConfig",
    "NumericalError",
    "PriorSpec",
    "SBMDSError",
    "SamplerConfig",
    "SparseLikelihood",
    "Trace",
    "TruncatedNormalParams",
    "ValidationError",
    "grad_log_likelihood",
    "log_likelihood",
    "log_std_normal_cdf",
    "pairwise_distances",
    "read_trace",
    "run_chain",
    "sample_truncated_normal",
    "truncated_normal_logpdf",
]
