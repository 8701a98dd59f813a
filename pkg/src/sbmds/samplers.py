"""Posterior sampling for (sparse) Bayesian MDS.

A chain is Metropolis-within-Gibbs: each iteration updates all latent
locations (one HMC trajectory, or a sweep of per-object random-walk
proposals) and then the error variance with a truncated-normal random
walk.  Step sizes are tuned during burn-in only, by the multiplicative
rule in :func:`adapt_scale`, against acceptance rates averaged over a
sliding window of recent iterations.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import CouplingScheme, DissimMatrix, LatentConfig, TruncatedNormalParams, sample_truncated_normal
from .core import log_std_normal_cdf
from .evaluation.embedding import classical_mds
from .exceptions import ConfigurationError, DimensionError, NumericalError
from .likelihood import SparseLikelihood, _row_terms, coupling_pairs, log_likelihood

__all__ = [
    "PriorSpec",
    "SamplerConfig",
    "ChainState",
    "Trace",
    "log_prior_locations",
    "log_inverse_gamma",
    "log_posterior",
    "adapt_scale",
    "conditional_log_ratio",
    "mh_location_step",
    "leapfrog",
    "hmc_transition",
    "hmc_step",
    "sigma2_log_ratio",
    "sigma2_mh_step",
    "run_chain",
    "read_trace",
]

_LOG_2PI = math.log(2.0 * math.pi)
DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class PriorSpec:
    """Independent N(0, diag(location_var)) rows and IG(shape, scale) on sigma2."""

    location_var: float | tuple = 1.0
    sigma2_shape: float = 1.0
    sigma2_scale: float = 1.0

    def __post_init__(self):
        var = np.atleast_1d(np.asarray(self.location_var, dtype=float))
        if np.any(var <= 0) or self.sigma2_shape <= 0 or self.sigma2_scale <= 0:
            raise ConfigurationError("prior parameters must be positive")

    def location_precision(self, dim: int) -> np.ndarray:
        var = np.atleast_1d(np.asarray(self.location_var, dtype=float))
        if var.size == 1:
            var = np.full(dim, var[0])
        if var.size != dim:
            raise DimensionError(f"prior variance has {var.size} entries, latent dim is {dim}")
        return 1.0 / var


@dataclass
class SamplerConfig:
    """Run settings for :func:`run_chain`.

    ``freeze_scale`` picks the proposal scales used after burn-in:
    ``"window-mean"`` takes the geometric mean of the last ``adapt_window``
    adapted values, ``"last"`` keeps whatever value adaptation ended on.
    The windowed rule oscillates around its target, so the last value can
    sit far from the centre of that cycle.
    """

    algorithm: str = "hmc"
    iterations: int = 11000
    burn_in: int = 1000
    thin: int = 10
    leapfrog_steps: int = 20
    initial_step: float | None = None
    sigma2_initial_step: float | None = None
    target_accept: float | None = None
    sigma2_target_accept: float = 0.44
    adapt: bool = True
    adapt_window: int = 100
    freeze_scale: str = "window-mean"
    seed: int = 0

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ("hmc", "mh"):
            raise ConfigurationError(f"algorithm must be 'hmc' or 'mh', got {self.algorithm!r}")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ConfigurationError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.leapfrog_steps < 1 or self.adapt_window < 1:
            raise ConfigurationError("thin, leapfrog_steps and adapt_window must be >= 1")
        if self.freeze_scale not in ("window-mean", "last"):
            raise ConfigurationError("freeze_scale must be 'window-mean' or 'last'")
        if self.initial_step is not None and self.initial_step <= 0:
            raise ConfigurationError("initial_step must be positive")
        for rate in (self.target_accept, self.sigma2_target_accept):
            if rate is not None and not 0 < rate < 1:
                raise ConfigurationError("target acceptance rates must lie in (0, 1)")

    @property
    def location_target(self) -> float:
        if self.target_accept is not None:
            return self.target_accept
        return 0.65 if self.algorithm == "hmc" else 0.44

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    """Mutable state of one chain; the steps below update it in place."""

    X: np.ndarray
    sigma2: float
    location_scale: float
    sigma2_scale: float
    iteration: int = 0
    loglik: float | None = None
    accept_counts: dict = field(default_factory=lambda: {"location": 0, "sigma2": 0})
    proposal_counts: dict = field(default_factory=lambda: {"location": 0, "sigma2": 0})
    divergences: int = 0
    singular_pairs: int = 0

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float)
        if self.sigma2 <= 0 or self.location_scale <= 0 or self.sigma2_scale <= 0:
            raise ConfigurationError("sigma2 and step scales must be positive")


# ----------------------------------------------------------------------------
# target densities


def log_prior_locations(X, priors: PriorSpec) -> float:
    X = np.asarray(X, dtype=float)
    prec = priors.location_precision(X.shape[1])
    n, dim = X.shape
    return float(
        -0.5 * n * dim * _LOG_2PI + 0.5 * n * np.sum(np.log(prec)) - 0.5 * np.sum(X * X * prec)
    )


def log_inverse_gamma(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x


def log_posterior(delta, X, sigma2: float, scheme: CouplingScheme | None, priors: PriorSpec) -> float:
    """Log-likelihood plus the Gaussian location and inverse-gamma variance log priors."""
    X = X.coords if isinstance(X, LatentConfig) else np.asarray(X, dtype=float)
    return (
        log_likelihood(delta, X, sigma2, scheme)
        + log_prior_locations(X, priors)
        + log_inverse_gamma(sigma2, priors.sigma2_shape, priors.sigma2_scale)
    )


def adapt_scale(current: float, s: int, above_target: bool) -> float:
    """Grow or shrink a proposal scale by ``1 +- min(0.01, 1/sqrt(s - 1))``."""
    if s < 2:
        raise ValueError("adaptation starts at iteration s = 2")
    factor = min(0.01, 1.0 / math.sqrt(s - 1))
    return current * (1.0 + factor) if above_target else current * (1.0 - factor)


class _Window:
    """Sliding mean of the last ``size`` acceptance fractions."""

    def __init__(self, size):
        self._buf = deque(maxlen=size)

    def push(self, value):
        self._buf.append(value)

    @property
    def rate(self):
        return sum(self._buf) / len(self._buf) if self._buf else 0.0


# ----------------------------------------------------------------------------
# Metropolis-Hastings on locations


@numba.njit(cache=True)
def _mh_sweep(delta, x, sigma, lo_start, lo_end, up_end, steps, log_u, prior_prec):
    n_obj, dim = x.shape
    xn = np.empty(dim)
    accepted = 0
    for n in range(n_obj):
        lp = 0.0
        for d in range(dim):
            xn[d] = x[n, d] + steps[n, d]
            lp -= 0.5 * prior_prec[d] * (xn[d] * xn[d] - x[n, d] * x[n, d])
        new, _ = _row_terms(delta, x, n, xn, sigma, lo_start, lo_end, up_end)
        old, _ = _row_terms(delta, x, n, x[n], sigma, lo_start, lo_end, up_end)
        if log_u[n] < lp - (new - old):
            for d in range(dim):
                x[n, d] = xn[d]
            accepted += 1
    return accepted


def conditional_log_ratio(delta, X, sigma2, scheme, priors: PriorSpec, n: int, x_new) -> float:
    """log pi(X with row n = x_new) - log pi(X) using only terms touching object ``n``."""
    X = np.asarray(X, dtype=float)
    prec = priors.location_precision(X.shape[1])
    x_new = np.asarray(x_new, dtype=float)
    lik_obj = _as_likelihood(delta, scheme)
    lik = lik_obj.row_log_likelihood(X, sigma2, n, x_new) - lik_obj.row_log_likelihood(X, sigma2, n)
    return lik - 0.5 * float(np.sum(prec * (x_new**2 - X[n] ** 2)))


def mh_location_step(state: ChainState, delta, scheme, priors: PriorSpec, rng: np.random.Generator):
    """One sweep of per-object random-walk proposals ``x_n + tau * N(0, I)``.

    Objects are visited in index order; each acceptance test uses only the
    likelihood terms that involve the moving object.  Returns the number of
    accepted moves.
    """
    lik = _as_likelihood(delta, scheme)
    n_obj, dim = state.X.shape
    steps = state.location_scale * rng.standard_normal((n_obj, dim))
    log_u = np.log(rng.random(n_obj))
    accepted = _mh_sweep(
        lik.delta, state.X, math.sqrt(state.sigma2), lik.lo_start, lik.lo_end, lik.up_end,
        steps, log_u, priors.location_precision(dim),
    )
    state.accept_counts["location"] += accepted
    state.proposal_counts["location"] += n_obj
    state.loglik = None
    return accepted


# ----------------------------------------------------------------------------
# Hamiltonian Monte Carlo


def leapfrog(X, P, epsilon: float, steps: int, potential_grad):
    """Integrate dX/dt = P, dP/dt = -grad U with ``steps`` leapfrog steps.

    Returns copies ``(X', P')``; ``None`` when a non-finite gradient or
    position appears along the trajectory.
    """
    X = np.array(X, dtype=float)
    P = np.array(P, dtype=float)
    if steps == 0:
        return X, P
    g = potential_grad(X)
    for i in range(steps):
        P -= 0.5 * epsilon * g
        X += epsilon * P
        g = potential_grad(X)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(X))):
            return None
        P -= 0.5 * epsilon * g
    return X, P


@dataclass
class HMCResult:
    x: np.ndarray
    accepted: bool
    log_accept_ratio: float
    divergent: bool
    potential: float


def hmc_transition(x, potential, potential_grad, epsilon, steps, rng, current_potential=None):
    """Generic HMC transition with identity mass matrix.

    ``potential`` is U = -log target.  Momentum is drawn first, then one
    uniform for the accept test, so two targets that differ by a constant
    see identical random streams and decisions.
    """
    x = np.asarray(x, dtype=float)
    p0 = rng.standard_normal(x.shape)
    log_u = math.log(rng.random())
    u0 = potential(x) if current_potential is None else current_potential
    out = leapfrog(x, p0, epsilon, steps, potential_grad)
    if out is None:
        return HMCResult(x, False, -math.inf, True, u0)
    x_new, p_new = out
    u_new = potential(x_new)
    log_ratio = -u_new + u0 - 0.5 * float(np.sum(p_new * p_new)) + 0.5 * float(np.sum(p0 * p0))
    if not math.isfinite(log_ratio) or -log_ratio > DIVERGENCE_THRESHOLD:
        return HMCResult(x, False, log_ratio if math.isfinite(log_ratio) else -math.inf, True, u0)
    if log_u < log_ratio:
        return HMCResult(x_new, True, log_ratio, False, u_new)
    return HMCResult(x, False, log_ratio, False, u0)


def hmc_step(state: ChainState, delta, scheme, priors: PriorSpec, config: SamplerConfig, rng):
    """One HMC trajectory over all latent locations at fixed sigma2."""
    lik = _as_likelihood(delta, scheme)
    prec = priors.location_precision(state.X.shape[1])
    sigma2 = state.sigma2

    def potential(x):
        return -(lik.log_likelihood(x, sigma2) - 0.5 * float(np.sum(x * x * prec)))

    def potential_grad(x):
        info = lik.gradient(x, sigma2)
        state.singular_pairs += info.n_singular
        return -info.grad + x * prec

    u0 = None
    if state.loglik is not None:
        u0 = -(state.loglik - 0.5 * float(np.sum(state.X * state.X * prec)))
    res = hmc_transition(state.X, potential, potential_grad, state.location_scale,
                         config.leapfrog_steps, rng, current_potential=u0)
    state.proposal_counts["location"] += 1
    if res.divergent:
        state.divergences += 1
    if res.accepted:
        state.accept_counts["location"] += 1
        state.X = res.x
    state.loglik = -res.potential + 0.5 * float(np.sum(state.X * state.X * prec))
    return res.accepted


# ----------------------------------------------------------------------------
# error variance


def sigma2_log_ratio(current_ll, proposed_ll, sigma2, proposal, scale, priors: PriorSpec) -> float:
    """MH log-ratio for a truncated-normal random walk on sigma2.

    The Hastings term ``log Phi(sigma2 / scale) - log Phi(proposal / scale)``
    corrects for the proposal's truncation at zero.
    """
    prior = log_inverse_gamma(proposal, priors.sigma2_shape, priors.sigma2_scale) - log_inverse_gamma(
        sigma2, priors.sigma2_shape, priors.sigma2_scale
    )
    hastings = log_std_normal_cdf(sigma2 / scale) - log_std_normal_cdf(proposal / scale)
    return proposed_ll - current_ll + prior + hastings


def sigma2_mh_step(state: ChainState, delta, scheme, priors: PriorSpec, rng):
    """Truncated-normal random-walk update of sigma2 at fixed locations."""
    lik = _as_likelihood(delta, scheme)
    if state.loglik is None:
        state.loglik = lik.log_likelihood(state.X, state.sigma2)
    proposal = sample_truncated_normal(TruncatedNormalParams(state.sigma2, state.sigma2_scale), rng)
    log_u = math.log(rng.random())
    proposed_ll = lik.log_likelihood(state.X, proposal)
    ratio = sigma2_log_ratio(state.loglik, proposed_ll, state.sigma2, proposal, state.sigma2_scale, priors)
    state.proposal_counts["sigma2"] += 1
    if log_u < ratio:
        state.sigma2 = proposal
        state.loglik = proposed_ll
        state.accept_counts["sigma2"] += 1
        return True
    return False


# ----------------------------------------------------------------------------
# chain driver


@dataclass
class Trace:
    """Thinned post burn-in samples of one chain."""

    iterations: np.ndarray
    sigma2: np.ndarray
    samples: np.ndarray
    acceptance: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iterations)

    @property
    def n_objects(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    def header(self):
        cols = ["iter", "sigma2"]
        cols += [f"x_{n + 1}_{d + 1}" for n in range(self.n_objects) for d in range(self.dim)]
        return cols

    def to_csv(self, path, meta_path=None) -> None:
        """Write ``iter,sigma2,x_1_1,...,x_N_D`` rows and an optional JSON sidecar."""
        path = Path(path)
        cells = len(self) * (2 + self.n_objects * self.dim)
        if cells > 1e8:
            import warnings

            warnings.warn(f"trace has {cells:.3g} cells; CSV output will be large", stacklevel=2)
        flat = self.samples.reshape(len(self), -1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for it, s2, row in zip(self.iterations, self.sigma2, flat):
                writer.writerow([int(it), repr(float(s2))] + [repr(float(v)) for v in row])
        if meta_path is not None:
            with open(meta_path, "w") as fh:
                json.dump(self.metadata(), fh, indent=2, sort_keys=True)
                fh.write("\n")

    def metadata(self) -> dict:
        out = dict(self.meta)
        out.update(
            acceptance=self.acceptance,
            wall_seconds=self.wall_seconds,
            n_retained=len(self),
            n_objects=self.n_objects,
            dim=self.dim,
        )
        return out


def read_trace(path, meta_path=None) -> Trace:
    """Inverse of :meth:`Trace.to_csv`."""
    with open(path) as fh:
        header = next(csv.reader(fh))
    if header[:2] != ["iter", "sigma2"]:
        raise ConfigurationError(f"{path}: not a trace file (header starts {header[:2]})")
    last = header[-1].split("_")
    n_obj, dim = int(last[1]), int(last[2])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = {}
    if meta_path is not None and Path(meta_path).exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    return Trace(
        iterations=data[:, 0].astype(np.int64),
        sigma2=data[:, 1].copy(),
        samples=data[:, 2:].reshape(len(data), n_obj, dim),
        acceptance=meta.pop("acceptance", {}),
        wall_seconds=float(meta.pop("wall_seconds", 0.0)),
        meta=meta,
    )


def _as_likelihood(delta, scheme):
    if isinstance(delta, SparseLikelihood):
        return delta
    return SparseLikelihood(delta, scheme)


def _delta_array(delta):
    arr = delta.values if isinstance(delta, DissimMatrix) else np.asarray(delta, dtype=float)
    return np.ascontiguousarray(arr, dtype=np.float64)


def initial_locations(delta, dim: int, init="classical-mds", rng=None) -> tuple[np.ndarray, str]:
    """Starting coordinates and a label describing where they came from."""
    delta_arr = _delta_array(delta)
    n_obj = delta_arr.shape[0]
    if isinstance(init, str):
        if init == "random":
            return rng.standard_normal((n_obj, dim)), "random"
        if init != "classical-mds":
            raise ConfigurationError(f"unknown init {init!r}")
        try:
            return classical_mds(delta_arr, dim), "classical-mds"
        except (NumericalError, ConfigurationError):
            if rng is None:
                raise
            return rng.standard_normal((n_obj, dim)), "random-fallback"
    X0 = init.coords if isinstance(init, LatentConfig) else np.asarray(init, dtype=float)
    if X0.shape != (n_obj, dim):
        raise ConfigurationError(f"init has shape {X0.shape}, expected {(n_obj, dim)}")
    return np.array(X0, dtype=float), "user"


def _initial_sigma2(delta_arr, X, scheme):
    # mean squared residual over the coupled pairs, kept away from zero
    i, j = coupling_pairs(scheme, X.shape[0])
    resid = delta_arr[i, j] - np.sqrt(np.sum((X[i] - X[j]) ** 2, axis=1))
    return max(float(np.mean(resid**2)), 1e-4)


def run_chain(
    delta,
    scheme: CouplingScheme | None = None,
    priors: PriorSpec | None = None,
    config: SamplerConfig | None = None,
    init="classical-mds",
    dim: int = 2,
    sigma2_init: float | None = None,
    callback=None,
) -> Trace:
    """Run one adaptive Metropolis-within-Gibbs chain.

    Parameters
    ----------
    delta : DissimMatrix or (N, N) array
    scheme : CouplingScheme, default full
    priors : PriorSpec, default N(0, I) locations and IG(1, 1) variance
    config : SamplerConfig
    init : "classical-mds", "random", LatentConfig or (N, dim) array
    dim : int
        Latent dimension (ignored when ``init`` carries coordinates).
    sigma2_init : float, optional
        Starting error variance; defaults to the mean squared residual of
        the initial configuration.
    callback : callable(state), optional
        Called after every iteration.

    Returns
    -------
    Trace
        ``(iterations - burn_in) // thin`` retained snapshots.
    """
    scheme = scheme if scheme is not None else CouplingScheme.full()
    priors = priors if priors is not None else PriorSpec()
    config = config if config is not None else SamplerConfig()
    delta_arr = _delta_array(delta)
    n_obj = delta_arr.shape[0]
    if delta_arr.shape != (n_obj, n_obj):
        raise DimensionError("dissimilarities must be square")
    scheme.validate(n_obj)
    if not isinstance(init, str):
        dim = np.shape(init.coords if isinstance(init, LatentConfig) else init)[1]
    rng = np.random.default_rng(config.seed)
    X0, init_label = initial_locations(delta_arr, dim, init, rng)
    if sigma2_init is None:
        sigma2_init = _initial_sigma2(delta_arr, X0, scheme)
    default_step = 0.01 if config.algorithm == "hmc" else 0.1
    lik = SparseLikelihood(delta_arr, scheme)
    state = ChainState(
        X=X0,
        sigma2=float(sigma2_init),
        location_scale=config.initial_step or default_step,
        sigma2_scale=config.sigma2_initial_step or 0.1 * float(sigma2_init),
    )
    loc_window = _Window(config.adapt_window)
    s2_window = _Window(config.adapt_window)
    loc_history = deque(maxlen=config.adapt_window)
    s2_history = deque(maxlen=config.adapt_window)
    n_keep = config.n_retained
    kept_iter = np.empty(n_keep, dtype=np.int64)
    kept_s2 = np.empty(n_keep)
    kept_x = np.empty((n_keep, n_obj, dim))
    post = {"location": [0, 0], "sigma2": [0, 0]}
    k = 0
    t0 = time.perf_counter()
    for s in range(1, config.iterations + 1):
        state.iteration = s
        if config.algorithm == "hmc":
            loc_rate = float(hmc_step(state, lik, scheme, priors, config, rng))
            loc_props = 1
        else:
            loc_rate = mh_location_step(state, lik, scheme, priors, rng) / n_obj
            loc_props = n_obj
        s2_acc = sigma2_mh_step(state, lik, scheme, priors, rng)
        if not np.all(np.isfinite(state.X)):
            raise NumericalError(f"non-finite latent state at iteration {s}")
        loc_window.push(loc_rate)
        s2_window.push(float(s2_acc))
        if s <= config.burn_in:
            if config.adapt and s >= 2:
                state.location_scale = adapt_scale(
                    state.location_scale, s, loc_window.rate > config.location_target
                )
                state.sigma2_scale = adapt_scale(
                    state.sigma2_scale, s, s2_window.rate > config.sigma2_target_accept
                )
                loc_history.append(math.log(state.location_scale))
                s2_history.append(math.log(state.sigma2_scale))
            if s == config.burn_in and loc_history and config.freeze_scale == "window-mean":
                state.location_scale = math.exp(math.fsum(loc_history) / len(loc_history))
                state.sigma2_scale = math.exp(math.fsum(s2_history) / len(s2_history))
        else:
            post["location"][0] += loc_rate * loc_props
            post["location"][1] += loc_props
            post["sigma2"][0] += s2_acc
            post["sigma2"][1] += 1
            if (s - config.burn_in) % config.thin == 0 and k < n_keep:
                kept_iter[k] = s
                kept_s2[k] = state.sigma2
                kept_x[k] = state.X
                k += 1
        if callback is not None:
            callback(state)
    wall = time.perf_counter() - t0
    acceptance = {
        "location": post["location"][0] / post["location"][1] if post["location"][1] else None,
        "sigma2": post["sigma2"][0] / post["sigma2"][1] if post["sigma2"][1] else None,
        "location_overall": state.accept_counts["location"] / max(state.proposal_counts["location"], 1),
        "sigma2_overall": state.accept_counts["sigma2"] / max(state.proposal_counts["sigma2"], 1),
    }
    meta = {
        "config": asdict(config),
        "seed": config.seed,
        "scheme": str(scheme),
        "priors": {
            "location_var": np.atleast_1d(priors.location_var).tolist(),
            "sigma2_shape": priors.sigma2_shape,
            "sigma2_scale": priors.sigma2_scale,
        },
        "init": init_label,
        "sigma2_init": float(sigma2_init),
        "final_location_scale": state.location_scale,
        "final_sigma2_scale": state.sigma2_scale,
        "divergences": state.divergences,
        "singular_pairs": state.singular_pairs,
    }
    return Trace(kept_iter, kept_s2, kept_x, acceptance, wall, meta)
