"""scikit-learn style front end for sparse Bayesian MDS."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import CouplingScheme
from .evaluation.embedding import summarize_aligned
from .exceptions import ConfigurationError
from .likelihood import SparseLikelihood
from .samplers import PriorSpec, SamplerConfig, log_prior_locations, run_chain
from .validation import check_dissimilarity


class BayesianMDS(TransformerMixin, BaseEstimator):
    """Posterior embedding of a precomputed dissimilarity matrix.

    Parameters
    ----------
    n_components : int, default=2
        Latent dimension D.
    coupling : str or CouplingScheme, default="full"
        ``"full"``, ``"banded:B"``, ``"landmark:L"`` or ``"auto"``.
    sampler : {"hmc", "mh"}, default="hmc"
    n_iter, burn_in, thin : int
        Chain length, then the discarded prefix and the thinning interval.
    leapfrog_steps : int, default=20
    step_size : float, optional
        Initial location proposal scale (adapted during burn-in).
    target_accept : float, optional
        Location acceptance target; 0.65 for HMC and 0.44 for MH when unset.
    location_var : float, default=1.0
        Prior variance of each latent coordinate.
    sigma2_shape, sigma2_scale : float, default=1.0
        Inverse-gamma prior on the error variance.
    init : {"classical-mds", "random"} or array, default="classical-mds"
    summary : {"mean", "median"}, default="mean"
        How aligned snapshots are reduced to ``embedding_``.
    random_state : int, default=0

    Attributes
    ----------
    embedding_ : ndarray of shape (n_samples, n_components)
        Posterior summary of the locations, aligned to the final snapshot.
    sigma2_ : float
        Posterior mean of the error variance.
    trace_ : Trace
    coupling_ : CouplingScheme
        Resolved scheme (``"auto"`` becomes a concrete band count).
    acceptance_ : dict
    n_features_in_ : int

    Examples
    --------
    >>> from sbmds.core import pairwise_distances
    >>> import numpy as np
    >>> D = pairwise_distances(np.random.default_rng(0).normal(size=(12, 2)))
    >>> est = BayesianMDS(n_iter=300, burn_in=100, thin=10).fit(D)
    >>> est.embedding_.shape
    (12, 2)
    """

    def __init__(
        self,
        n_components=2,
        coupling="full",
        sampler="hmc",
        n_iter=11000,
        burn_in=1000,
        thin=10,
        leapfrog_steps=20,
        step_size=None,
        target_accept=None,
        location_var=1.0,
        sigma2_shape=1.0,
        sigma2_scale=1.0,
        init="classical-mds",
        summary="mean",
        random_state=0,
    ):
        self.n_components = n_components
        self.coupling = coupling
        self.sampler = sampler
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.leapfrog_steps = leapfrog_steps
        self.step_size = step_size
        self.target_accept = target_accept
        self.location_var = location_var
        self.sigma2_shape = sigma2_shape
        self.sigma2_scale = sigma2_scale
        self.init = init
        self.summary = summary
        self.random_state = random_state

    def _resolve_coupling(self, n_objects):
        if isinstance(self.coupling, CouplingScheme):
            return self.coupling.validate(n_objects)
        return CouplingScheme.parse(str(self.coupling), n_objects, self.n_components)

    def _priors(self):
        return PriorSpec(self.location_var, self.sigma2_shape, self.sigma2_scale)

    def fit(self, X, y=None):
        """Sample the posterior for the dissimilarity matrix ``X``.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_samples)
            Precomputed dissimilarities.
        y : ignored
        """
        delta = check_dissimilarity(X)
        if self.summary not in ("mean", "median"):
            raise ConfigurationError(f"summary must be 'mean' or 'median', got {self.summary!r}")
        scheme = self._resolve_coupling(delta.shape[0])
        config = SamplerConfig(
            algorithm=self.sampler,
            iterations=self.n_iter,
            burn_in=self.burn_in,
            thin=self.thin,
            leapfrog_steps=self.leapfrog_steps,
            initial_step=self.step_size,
            target_accept=self.target_accept,
            seed=self.random_state,
        )
        if config.n_retained < 1:
            raise ConfigurationError("n_iter, burn_in and thin leave no retained samples")
        trace = run_chain(delta, scheme, self._priors(), config, init=self.init, dim=self.n_components)
        self.trace_ = trace
        self.coupling_ = scheme
        self.embedding_ = summarize_aligned(trace.samples, trace.samples[-1], self.summary)
        self.sigma2_ = float(np.mean(trace.sigma2))
        self.acceptance_ = dict(trace.acceptance)
        self.n_features_in_ = delta.shape[0]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_

    def transform(self, X):
        """Return ``embedding_``; only the fitted matrix can be embedded."""
        check_is_fitted(self, "embedding_")
        delta = check_dissimilarity(X)
        if delta.shape[0] != self.n_features_in_:
            raise ConfigurationError(
                f"BayesianMDS embeds only the matrix it was fitted on ({self.n_features_in_} objects)"
            )
        return self.embedding_

    def score(self, X, y=None):
        """Log posterior (up to a constant) of ``embedding_`` and ``sigma2_``."""
        check_is_fitted(self, "embedding_")
        delta = check_dissimilarity(X)
        lik = SparseLikelihood(delta, self.coupling_)
        return lik.log_likelihood(self.embedding_, self.sigma2_) + log_prior_locations(
            self.embedding_, self._priors()
        )
