"""Core data types plus truncated-normal and distance numerics.

Everything here is pure: random draws take an explicit
:class:`numpy.random.Generator` and nothing touches global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import special

from .exceptions import ConfigurationError, DimensionError, DomainError, ValidationError

__all__ = [
    "LatentConfig",
    "DissimMatrix",
    "CouplingScheme",
    "TruncatedNormalParams",
    "euclidean_distance",
    "pairwise_distances",
    "log_std_normal_cdf",
    "truncated_normal_logpdf",
    "truncated_normal_cdf",
    "sample_truncated_normal",
    "truncated_normal_draws",
    "read_dissim_csv",
    "write_matrix_csv",
]

_LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
# below this z the continued fraction for the Mills ratio takes over
_MILLS_SWITCH = -5.0
_MILLS_TERMS = 40
# mass under which inverse-CDF sampling loses too many digits
_INVERSE_CDF_MIN_MASS = 1e-6


@dataclass(frozen=True)
class LatentConfig:
    """N x D matrix of latent coordinates, row ``n`` is object ``n``."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2:
            raise DimensionError(f"coords must be 2-D, got shape {coords.shape}")
        if coords.shape[0] < 2 or coords.shape[1] < 1:
            raise DimensionError(f"need N >= 2 and D >= 1, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("latent coordinates must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n_objects(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def distances(self) -> np.ndarray:
        return pairwise_distances(self.coords)


@dataclass(frozen=True)
class DissimMatrix:
    """Symmetric N x N matrix of observed dissimilarities with zero diagonal.

    Stored dense; ``atol`` is the symmetry tolerance used during validation.
    Values within ``atol`` of symmetric are symmetrised by averaging.
    """

    values: np.ndarray
    atol: float = field(default=1e-8, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        _check_dissim_values(values, self.atol)
        values = 0.5 * (values + values.T)
        np.fill_diagonal(values, 0.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_objects(self) -> int:
        return self.values.shape[0]

    @property
    def n_pairs(self) -> int:
        n = self.n_objects
        return n * (n - 1) // 2


def _check_dissim_values(values, atol):
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError(f"dissimilarity matrix must be square, got shape {values.shape}")
    if values.shape[0] < 2:
        raise ValidationError("dissimilarity matrix needs at least 2 objects")
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(f"non-finite entry at ({i}, {j})")
    diag = np.abs(np.diag(values))
    if np.any(diag > atol):
        i = int(np.argmax(diag > atol))
        raise ValidationError(f"non-zero diagonal entry at ({i}, {i}): {float(values[i, i])!r}")
    asym = np.abs(values - values.T) > atol
    if asym.any():
        i, j = np.argwhere(asym)[0]
        raise ValidationError(
            f"matrix is not symmetric: entry ({i}, {j}) = {float(values[i, j])!r} "
            f"but ({j}, {i}) = {float(values[j, i])!r}"
        )
    neg = values < 0
    if neg.any():
        i, j = np.argwhere(neg)[0]
        raise ValidationError(f"negative dissimilarity at ({i}, {j}): {float(values[i, j])!r}")


@dataclass(frozen=True)
class CouplingScheme:
    """Which unordered pairs enter the likelihood.

    ``kind`` is ``"full"``, ``"banded"`` (keep pairs with ``|n - n'| <= size``)
    or ``"landmark"`` (keep every pair touching one of the first ``size``
    objects). Object indices are 0-based throughout the package.
    """

    kind: str = "full"
    size: int | None = None

    def __post_init__(self):
        if self.kind not in ("full", "banded", "landmark"):
            raise ConfigurationError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "full":
            if self.size is not None:
                raise ConfigurationError("full coupling takes no size")
        else:
            if self.size is None or int(self.size) != self.size or self.size < 1:
                raise ConfigurationError(f"{self.kind} coupling needs a positive integer size")
            object.__setattr__(self, "size", int(self.size))

    @classmethod
    def full(cls) -> "CouplingScheme":
        return cls("full")

    @classmethod
    def banded(cls, bands: int) -> "CouplingScheme":
        return cls("banded", bands)

    @classmethod
    def landmark(cls, landmarks: int) -> "CouplingScheme":
        return cls("landmark", landmarks)

    @classmethod
    def auto(cls, n_objects: int, dim: int) -> "CouplingScheme":
        """Banded scheme with ``ceil(dim * sqrt(n_objects))`` bands, capped at N - 1."""
        return cls.banded(min(default_coupling_size(n_objects, dim), n_objects - 1))

    @classmethod
    def parse(cls, text: str, n_objects: int | None = None, dim: int | None = None):
        """Parse ``full``, ``banded:B``, ``landmark:L`` or ``auto``."""
        text = text.strip().lower()
        if text == "full":
            return cls.full()
        if text == "auto":
            if n_objects is None or dim is None:
                raise ConfigurationError("'auto' coupling needs n_objects and dim")
            return cls.auto(n_objects, dim)
        kind, sep, size = text.partition(":")
        if not sep or kind not in ("banded", "landmark"):
            raise ConfigurationError(f"cannot parse coupling {text!r}")
        try:
            value = int(size)
        except ValueError:
            raise ConfigurationError(f"cannot parse coupling size in {text!r}") from None
        return cls(kind, value)

    def validate(self, n_objects: int) -> "CouplingScheme":
        if self.kind == "banded" and not 1 <= self.size <= n_objects - 1:
            raise ConfigurationError(f"bands must lie in [1, {n_objects - 1}], got {self.size}")
        if self.kind == "landmark" and not 1 <= self.size <= n_objects:
            raise ConfigurationError(f"landmarks must lie in [1, {n_objects}], got {self.size}")
        return self

    def __str__(self):
        return self.kind if self.kind == "full" else f"{self.kind}:{self.size}"


def default_coupling_size(n_objects: int, dim: int) -> int:
    """Heuristic band/landmark count ``ceil(dim * sqrt(n_objects))``."""
    return int(math.ceil(dim * math.sqrt(n_objects)))


@dataclass(frozen=True)
class TruncatedNormalParams:
    """Normal(mean, sd**2) restricted to the open interval (lower, upper)."""

    mean: float
    sd: float
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise DomainError(f"sd must be positive and finite, got {self.sd!r}")
        if not math.isfinite(self.lower):
            raise DomainError("lower bound must be finite")
        if not self.lower < self.upper:
            raise DomainError(f"need lower < upper, got ({self.lower}, {self.upper})")
        if not math.isfinite(self.mean):
            raise DomainError("mean must be finite")


def euclidean_distance(x_a, x_b) -> float:
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    if x_a.shape != x_b.shape or x_a.ndim != 1 or x_a.size == 0:
        raise DimensionError(f"vectors must share a non-empty 1-D shape, got {x_a.shape} and {x_b.shape}")
    return math.sqrt(float(np.sum((x_a - x_b) ** 2)))


def pairwise_distances(coords) -> np.ndarray:
    """Dense matrix of Euclidean distances between the rows of ``coords``."""
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@numba.njit(cache=True)
def _log_ndtr(z):
    if z > 0.0:
        return math.log1p(-0.5 * math.erfc(z / _SQRT2))
    if z > _MILLS_SWITCH:
        return math.log(0.5 * math.erfc(-z / _SQRT2))
    # log Phi(z) = log phi(z) + log R(-z), R the Mills ratio by continued fraction
    x = -z
    t = 0.0
    for k in range(_MILLS_TERMS, 0, -1):
        t = k / (x + t)
    return -0.5 * z * z - 0.5 * _LOG_2PI - math.log(x + t)


@numba.vectorize(["float64(float64)"], cache=True)
def _log_ndtr_ufunc(z):
    return _log_ndtr(z)


def log_std_normal_cdf(z):
    """log of the standard normal CDF, accurate far into the lower tail.

    Accepts scalars or arrays; scalars come back as Python floats.
    """
    out = _log_ndtr_ufunc(np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _log_mass(alpha, beta):
    """log(Phi(beta) - Phi(alpha)) for alpha < beta, stable in both tails."""
    if alpha > 0:
        # reflect so both bounds sit in the lower tail
        alpha, beta = -beta, -alpha
    la = log_std_normal_cdf(alpha) if math.isfinite(alpha) else -math.inf
    lb = log_std_normal_cdf(beta) if math.isfinite(beta) else 0.0
    if la == -math.inf:
        return lb
    return lb + math.log1p(-math.exp(la - lb))


def truncated_normal_logpdf(x, params: TruncatedNormalParams):
    """Log-density of the truncated normal; ``-inf`` outside (lower, upper)."""
    x = np.asarray(x, dtype=float)
    mu, sd = params.mean, params.sd
    alpha = (params.lower - mu) / sd
    beta = (params.upper - mu) / sd
    log_norm = _log_mass(alpha, beta)
    z = (x - mu) / sd
    out = -0.5 * _LOG_2PI - math.log(sd) - 0.5 * z * z - log_norm
    out = np.where((x > params.lower) & (x < params.upper), out, -np.inf)
    return float(out) if out.ndim == 0 else out


def truncated_normal_cdf(x, params: TruncatedNormalParams):
    """CDF of the truncated normal (used by goodness-of-fit checks)."""
    x = np.asarray(x, dtype=float)
    mu, sd = params.mean, params.sd
    alpha = (params.lower - mu) / sd
    beta = (params.upper - mu) / sd
    xc = np.clip((x - mu) / sd, alpha, beta)
    if alpha > 0:
        # upper tail: work with survival functions
        num = special.ndtr(-xc) - special.ndtr(-beta)
        den = special.ndtr(-alpha) - special.ndtr(-beta)
        out = 1.0 - num / den
    else:
        out = (special.ndtr(xc) - special.ndtr(alpha)) / (special.ndtr(beta) - special.ndtr(alpha))
    return float(out) if out.ndim == 0 else out


def sample_truncated_normal(params: TruncatedNormalParams, rng: np.random.Generator, size=None):
    """Draw from the truncated normal.

    Inverse-CDF when the interval holds at least 1e-6 of the normal mass,
    otherwise rejection sampling (exponential proposal in a tail, uniform
    proposal for a tiny interval around the mode).
    """
    mu, sd = params.mean, params.sd
    alpha = (params.lower - mu) / sd
    beta = (params.upper - mu) / sd
    n = 1 if size is None else int(np.prod(size))
    if _log_mass(alpha, beta) >= math.log(_INVERSE_CDF_MIN_MASS):
        z = _inverse_cdf_draws(alpha, beta, rng, n)
    elif alpha >= 0:
        z = _tail_rejection(alpha, beta, rng, n)
    elif beta <= 0:
        z = -_tail_rejection(-beta, -alpha, rng, n)
    else:
        z = _uniform_rejection(alpha, beta, rng, n)
    out = mu + sd * z
    # guard against rounding onto a bound
    out = np.clip(out, np.nextafter(params.lower, np.inf), np.nextafter(params.upper, -np.inf))
    if size is None:
        return float(out[0])
    return out.reshape(size)


def truncated_normal_draws(mean, sd: float, rng: np.random.Generator, lower: float = 0.0) -> np.ndarray:
    """One draw from N(mean_i, sd**2) truncated to (lower, inf) per entry of ``mean``.

    Vectorised over ``mean``; entries whose interval holds less than 1e-6
    of the mass are redrawn with :func:`sample_truncated_normal`.
    """
    mean = np.asarray(mean, dtype=float)
    alpha = (lower - mean) / sd
    fa = special.ndtr(alpha)
    mass = special.ndtr(-alpha)
    z = special.ndtri(fa + rng.random(mean.shape) * mass)
    out = mean + sd * z
    small = mass < _INVERSE_CDF_MIN_MASS
    for idx in zip(*np.nonzero(small)):
        out[idx] = sample_truncated_normal(TruncatedNormalParams(float(mean[idx]), sd, lower), rng)
    return np.maximum(out, np.nextafter(lower, np.inf))


def _inverse_cdf_draws(alpha, beta, rng, n):
    u = rng.random(n)
    if alpha > 0:
        # upper tail, invert the survival function to keep precision
        sa, sb = special.ndtr(-alpha), special.ndtr(-beta)
        return -special.ndtri(sa - u * (sa - sb))
    fa, fb = special.ndtr(alpha), special.ndtr(beta)
    return special.ndtri(fa + u * (fb - fa))


def _tail_rejection(alpha, beta, rng, n):
    # Robert (1995) exponential proposal on (alpha, inf), alpha >= 0
    rate = 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0))
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 16)
        z = alpha + rng.exponential(1.0 / rate, m)
        keep = (rng.random(m) <= np.exp(-0.5 * (z - rate) ** 2)) & (z < beta)
        z = z[keep][: n - filled]
        out[filled : filled + z.size] = z
        filled += z.size
    return out


def _uniform_rejection(alpha, beta, rng, n):
    # interval straddles zero, so the density peak inside is phi(0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 16)
        z = rng.uniform(alpha, beta, m)
        keep = rng.random(m) <= np.exp(-0.5 * z * z)
        z = z[keep][: n - filled]
        out[filled : filled + z.size] = z
        filled += z.size
    return out


def read_dissim_csv(path, skip_header: bool = False, atol: float = 1e-8) -> DissimMatrix:
    """Read a comma-separated square matrix, row ``n`` on line ``n``."""
    try:
        values = np.loadtxt(Path(path), delimiter=",", skiprows=1 if skip_header else 0, ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return DissimMatrix(values, atol=atol)


def write_matrix_csv(path, values) -> None:
    """Write a numeric matrix as headerless CSV with round-trip precision."""
    np.savetxt(Path(path), np.asarray(values, dtype=float), delimiter=",", fmt="%.17g")
