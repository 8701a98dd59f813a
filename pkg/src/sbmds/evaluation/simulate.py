"""Synthetic data: Gaussian latent points plus noisy observed distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import pairwise_distances, truncated_normal_draws
from ..exceptions import ConfigurationError

LOGNORMAL_FLOOR = 1e-6


@dataclass(frozen=True)
class SimSpec:
    n_objects: int
    true_dim: int = 2
    sigma_true: float = 0.2
    noise_kind: str = "truncated-normal"
    seed: int = 0

    def __post_init__(self):
        if self.n_objects < 2 or self.true_dim < 1:
            raise ConfigurationError("need n_objects >= 2 and true_dim >= 1")
        if not self.sigma_true >= 0:
            raise ConfigurationError("sigma_true must be non-negative")
        if self.noise_kind not in ("truncated-normal", "log-normal"):
            raise ConfigurationError(f"unknown noise kind {self.noise_kind!r}")


def simulate_dataset(spec: SimSpec, rng: np.random.Generator | None = None):
    """Draw ``(X_true, delta_true, delta_obs)``.

    Locations are i.i.d. standard normal.  Each unordered pair gets one
    noise draw, so ``delta_obs`` is symmetric by construction:

    * truncated-normal: ``delta ~ N(delta_true, sigma_true**2)`` truncated to (0, inf)
    * log-normal: ``delta = delta_true + exp(Z) - 1`` with ``Z ~ N(0, sigma_true**2)``
      (exp(Z) has median 1), floored at 1e-6
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n = spec.n_objects
    X = rng.standard_normal((n, spec.true_dim))
    d_true = pairwise_distances(X)
    iu = np.triu_indices(n, 1)
    if spec.sigma_true == 0:
        obs_upper = d_true[iu].copy()
    elif spec.noise_kind == "truncated-normal":
        obs_upper = truncated_normal_draws(d_true[iu], spec.sigma_true, rng)
    else:
        z = rng.normal(0.0, spec.sigma_true, iu[0].size)
        obs_upper = np.maximum(d_true[iu] + np.expm1(z), LOGNORMAL_FLOOR)
    d_obs = np.zeros((n, n))
    d_obs[iu] = obs_upper
    d_obs = d_obs + d_obs.T
    return X, d_true, d_obs
