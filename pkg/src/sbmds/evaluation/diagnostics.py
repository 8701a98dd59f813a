"""Accuracy and mixing diagnostics for sampler output."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import DissimMatrix
from ..exceptions import DimensionError

ESS_CAP = 10.0
HELLINGER_BINS = 512
HELLINGER_PAD = 0.05


@dataclass
class MetricReport:
    mse_bar: float | None = None
    ess_min: float | None = None
    ess_per_hour: float | None = None
    hellinger: float | None = None
    seconds: float | None = None

    def __post_init__(self):
        if self.hellinger is not None and not 0.0 <= self.hellinger <= 1.0:
            raise ValueError("hellinger must lie in [0, 1]")


def _samples(trace):
    return trace.samples if hasattr(trace, "samples") else np.asarray(trace, dtype=float)


def mean_mse(trace, true_distances, max_pairs: int = 1000, rng: np.random.Generator | None = None) -> float:
    """Mean over retained samples and pairs of squared distance error.

    All ``N(N-1)/2`` pairs are used when there are at most ``max_pairs`` of
    them; otherwise ``max_pairs`` distinct pairs are drawn uniformly.
    ``trace`` is a :class:`~sbmds.samplers.Trace` or an (S, N, D) array.
    """
    samples = _samples(trace)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise DimensionError("trace must hold at least one (N, D) snapshot")
    truth = true_distances.values if isinstance(true_distances, DissimMatrix) else np.asarray(true_distances)
    n = samples.shape[1]
    if truth.shape != (n, n):
        raise DimensionError(f"true distances have shape {truth.shape}, trace has N={n}")
    i, j = np.triu_indices(n, 1)
    if i.size > max_pairs:
        rng = np.random.default_rng(0) if rng is None else rng
        pick = rng.choice(i.size, size=max_pairs, replace=False)
        pick.sort()
        i, j = i[pick], j[pick]
    diff = samples[:, i, :] - samples[:, j, :]
    est = np.sqrt(np.einsum("spd,spd->sp", diff, diff))
    return float(np.mean((est - truth[i, j]) ** 2))


def autocorrelation(series) -> np.ndarray:
    """Sample autocorrelation at every lag (FFT, biased normalisation)."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / acov[0]


def ess(series) -> float:
    """Effective sample size with Geyer's initial positive sequence.

    Pairs ``rho_{2k} + rho_{2k+1}`` are summed while positive.  The
    result is capped at ``10 * S``, which strongly anti-correlated chains
    would otherwise exceed without bound.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValueError("ess needs a 1-D series of length >= 10")
    if np.ptp(x) == 0 or not np.isfinite(x).all():
        raise ValueError("ess is undefined for a constant or non-finite series")
    n = x.size
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(n // 2):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    if tau <= 1.0 / ESS_CAP:
        return ESS_CAP * n
    return min(n / tau, ESS_CAP * n)


def monitored_series(trace, monitor="all"):
    """Columns whose ESS is tracked.

    ``monitor`` is ``"all"`` (sigma2 and every coordinate), ``"sigma2"``,
    ``"distances"`` (sigma2 and every pairwise distance, which unlike raw
    coordinates are identifiable) or a list of trace column names.
    """
    samples = trace.samples
    cols = {"sigma2": trace.sigma2}
    if monitor == "sigma2":
        return cols
    if monitor == "distances":
        n = samples.shape[1]
        for a in range(n):
            for b in range(a + 1, n):
                cols[f"d_{a + 1}_{b + 1}"] = np.linalg.norm(samples[:, a] - samples[:, b], axis=1)
        return cols
    flat = samples.reshape(len(samples), -1)
    names = [f"x_{n + 1}_{d + 1}" for n in range(samples.shape[1]) for d in range(samples.shape[2])]
    cols.update(zip(names, flat.T))
    if monitor == "all":
        return cols
    return {name: cols[name] for name in monitor}


def min_ess(trace, monitor="all") -> float:
    return min(ess(v) for v in monitored_series(trace, monitor).values())


def ess_per_hour(ess_value: float, seconds: float) -> float:
    return ess_value / (seconds / 3600.0)


def min_ess_per_hour(trace, monitor="all") -> float:
    """Smallest ESS over the monitored series divided by wall-clock hours."""
    if not trace.wall_seconds > 0:
        raise ValueError("trace has no wall time recorded")
    return ess_per_hour(min_ess(trace, monitor), trace.wall_seconds)


def hellinger(samples_a, samples_b, bins: int = HELLINGER_BINS) -> float:
    """Hellinger distance between two sample sets on a shared histogram.

    The grid spans the union of both ranges padded by 5% on each side.
    Computed as ``sqrt(0.5 * sum (sqrt p - sqrt q)**2)``, which is exactly
    zero for identical inputs.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("hellinger needs non-empty samples")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    pad = HELLINGER_PAD * (hi - lo) if hi > lo else 0.5
    edges = np.linspace(lo - pad, hi + pad, bins + 1)
    p = np.histogram(a, edges)[0] / a.size
    q = np.histogram(b, edges)[0] / b.size
    h2 = 0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))
    return min(1.0, math.sqrt(max(h2, 0.0)))
