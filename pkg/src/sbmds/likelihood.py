"""Full and sparse truncated-normal log-likelihoods and their gradients.

Every coupling scheme is reduced to two contiguous index ranges per row
``n`` (0-based)::

    lower partners  [lo_start[n], lo_end[n])   all < n
    upper partners  [n + 1,       up_end[n])   all > n

The log-likelihood visits each unordered pair once through the upper
ranges; a gradient row visits both ranges.  Row sums use pairwise
summation and the row totals are combined by the same pairwise rule, so a
row-parallel run reproduces the serial result bit for bit, and Full,
Banded(N - 1) and Landmark(N) (which produce identical ranges) agree
exactly.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

import numba
import numpy as np

from .core import CouplingScheme, DissimMatrix, LatentConfig, _log_ndtr
from .exceptions import DimensionError, DomainError

__all__ = [
    "coupling_ranges",
    "coupling_set",
    "coupling_pairs",
    "coupling_count",
    "log_likelihood",
    "grad_log_likelihood",
    "row_log_likelihood",
    "GradientResult",
    "SparseLikelihood",
    "TimingRecord",
    "eval_timer",
]

_LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_PAIRWISE_BLOCK = 8
# coupling count above which the row-parallel kernels are used
PARALLEL_MIN_PAIRS = 200_000


def coupling_ranges(scheme: CouplingScheme, n_objects: int):
    """Per-row ``(lo_start, lo_end, up_end)`` arrays describing the index sets."""
    scheme.validate(n_objects)
    rows = np.arange(n_objects, dtype=np.int64)
    if scheme.kind == "full":
        lo_start = np.zeros(n_objects, dtype=np.int64)
        lo_end = rows.copy()
        up_end = np.full(n_objects, n_objects, dtype=np.int64)
    elif scheme.kind == "banded":
        b = scheme.size
        lo_start = np.maximum(rows - b, 0)
        lo_end = rows.copy()
        up_end = np.minimum(rows + b + 1, n_objects)
    else:
        n_land = scheme.size
        lo_start = np.zeros(n_objects, dtype=np.int64)
        lo_end = np.minimum(rows, n_land)
        up_end = np.where(rows < n_land, n_objects, rows + 1)
    return lo_start, lo_end, up_end


def coupling_set(scheme: CouplingScheme, n: int, n_objects: int) -> np.ndarray:
    """Sorted partner indices of object ``n`` (0-based)."""
    if not 0 <= n < n_objects:
        raise DimensionError(f"object index {n} outside [0, {n_objects})")
    lo_start, lo_end, up_end = coupling_ranges(scheme, n_objects)
    return np.concatenate(
        [np.arange(lo_start[n], lo_end[n]), np.arange(n + 1, up_end[n])]
    ).astype(np.int64)


def coupling_pairs(scheme: CouplingScheme, n_objects: int):
    """Arrays ``(i, j)`` of coupled pairs with ``i < j`` in ascending order."""
    _, _, up_end = coupling_ranges(scheme, n_objects)
    counts = up_end - np.arange(n_objects) - 1
    i = np.repeat(np.arange(n_objects), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    j = i + 1 + (np.arange(i.size) - starts)
    return i, j


def coupling_count(scheme: CouplingScheme, n_objects: int) -> int:
    """Number of unordered pairs retained by ``scheme``."""
    scheme.validate(n_objects)
    n = n_objects
    if scheme.kind == "full":
        return n * (n - 1) // 2
    if scheme.kind == "banded":
        b = scheme.size
        return b * n - b * (b + 1) // 2
    n_land = scheme.size
    return n_land * n - n_land * (n_land + 1) // 2


# ----------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _pairwise_sum(buf, m):
    # Bottom-up pairwise summation of buf[:m]; buf is used as scratch.
    # Iterative on purpose: numba's on-disk cache mishandles recursive functions.
    if m <= 0:
        return 0.0
    nb = 0
    for lo in range(0, m, _PAIRWISE_BLOCK):
        s = 0.0
        for k in range(lo, min(lo + _PAIRWISE_BLOCK, m)):
            s += buf[k]
        buf[nb] = s
        nb += 1
    while nb > 1:
        half = nb // 2
        for k in range(half):
            buf[k] = buf[2 * k] + buf[2 * k + 1]
        if nb % 2:
            buf[half] = buf[nb - 1]
            nb = half + 1
        else:
            nb = half
    return buf[0]


@numba.njit(cache=True)
def _dist(x, a, b):
    s = 0.0
    for d in range(x.shape[1]):
        t = x[a, d] - x[b, d]
        s += t * t
    return math.sqrt(s)


@numba.njit(cache=True)
def _pair_term(obs, dstar, sigma, inv_two_s2):
    r = obs - dstar
    return r * r * inv_two_s2 + _log_ndtr(dstar / sigma)


def _loglik_rows_impl(delta, x, sigma, up_end, row_totals):
    n_obj = x.shape[0]
    inv_two_s2 = 0.5 / (sigma * sigma)
    for n in numba.prange(n_obj):
        m = up_end[n] - n - 1
        if m <= 0:
            row_totals[n] = 0.0
            continue
        buf = np.empty(m)
        for k in range(m):
            j = n + 1 + k
            buf[k] = _pair_term(delta[n, j], _dist(x, n, j), sigma, inv_two_s2)
        row_totals[n] = _pairwise_sum(buf, m)


def _grad_coef_impl(delta, x, sigma, up_end, offsets, coef, singular):
    # pass 1: one coefficient per coupled pair, stored in CSR order of the upper ranges
    n_obj = x.shape[0]
    s2 = sigma * sigma
    for n in numba.prange(n_obj):
        base = offsets[n]
        n_sing = 0
        for j in range(n + 1, up_end[n]):
            dstar = _dist(x, n, j)
            if dstar == 0.0:
                coef[base + j - n - 1] = 0.0
                n_sing += 1
                continue
            z = dstar / sigma
            # phi(z) / Phi(z); z >= 0 so Phi(z) >= 1/2
            mills = math.exp(-0.5 * z * z) * _INV_SQRT_2PI / (1.0 - 0.5 * math.erfc(z / _SQRT2))
            coef[base + j - n - 1] = ((dstar - delta[n, j]) / s2 + mills / sigma) / dstar
        singular[n] = n_sing


def _grad_gather_impl(x, lo_start, lo_end, up_end, offsets, coef, grad):
    # pass 2: row n sums coef * (x_n - x_j) over its lower and upper partners
    n_obj, dim = x.shape
    for n in numba.prange(n_obj):
        m_lo = lo_end[n] - lo_start[n]
        m = m_lo + up_end[n] - n - 1
        if m <= 0:
            for d in range(dim):
                grad[n, d] = 0.0
            continue
        c = np.empty(m)
        idx = np.empty(m, dtype=np.int64)
        for k in range(m_lo):
            j = lo_start[n] + k
            idx[k] = j
            c[k] = coef[offsets[j] + n - j - 1]
        base = offsets[n]
        for k in range(m_lo, m):
            j = n + 1 + (k - m_lo)
            idx[k] = j
            c[k] = coef[base + j - n - 1]
        buf = np.empty(m)
        for d in range(dim):
            xnd = x[n, d]
            for k in range(m):
                buf[k] = c[k] * (xnd - x[idx[k], d])
            grad[n, d] = -_pairwise_sum(buf, m)


def _row_terms_impl(delta, x, n, xn, sigma, lo_start, lo_end, up_end):
    # likelihood terms that involve object n, evaluated with x[n] replaced by xn
    m_lo = lo_end[n] - lo_start[n]
    m = m_lo + up_end[n] - n - 1
    if m <= 0:
        return 0.0, 0
    inv_two_s2 = 0.5 / (sigma * sigma)
    buf = np.empty(m)
    for k in range(m):
        j = lo_start[n] + k if k < m_lo else n + 1 + (k - m_lo)
        s = 0.0
        for d in range(x.shape[1]):
            t = xn[d] - x[j, d]
            s += t * t
        buf[k] = _pair_term(delta[n, j], math.sqrt(s), sigma, inv_two_s2)
    return _pairwise_sum(buf, m), m


_loglik_rows = numba.njit(cache=True)(_loglik_rows_impl)
_grad_coef = numba.njit(cache=True)(_grad_coef_impl)
_grad_gather = numba.njit(cache=True)(_grad_gather_impl)
_row_terms = numba.njit(cache=True)(_row_terms_impl)
_par_kernels = {}


def _parallel_kernel(name):
    # compiled lazily; single-threaded runs never pay for it
    if name not in _par_kernels:
        impl = {
            "loglik": _loglik_rows_impl,
            "grad_coef": _grad_coef_impl,
            "grad_gather": _grad_gather_impl,
        }[name]
        _par_kernels[name] = numba.njit(parallel=True)(impl)
    return _par_kernels[name]


@numba.njit(cache=True)
def _reduce_rows(row_totals):
    return _pairwise_sum(row_totals, row_totals.shape[0])


def _use_parallel(n_pairs):
    # check the static config first: get_num_threads() spins up the thread pool
    return (
        n_pairs >= PARALLEL_MIN_PAIRS
        and numba.config.NUMBA_NUM_THREADS > 1
        and numba.get_num_threads() > 1
    )


# ----------------------------------------------------------------------------
# public API


@dataclass
class GradientResult:
    """Gradient matrix plus the number of coincident coupled pairs skipped."""

    grad: np.ndarray
    n_singular: int


class SparseLikelihood:
    """Log-likelihood and gradient for one dissimilarity matrix and scheme.

    Validation and index-range construction happen once here, so repeated
    evaluations (inside samplers) only pay for the kernels.  The module
    level functions are thin wrappers around this class.
    """

    def __init__(self, delta, scheme: CouplingScheme | None = None):
        values = delta.values if isinstance(delta, DissimMatrix) else np.asarray(delta, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError(f"dissimilarities must be square, got shape {values.shape}")
        self.delta = np.ascontiguousarray(values, dtype=np.float64)
        self.n_objects = self.delta.shape[0]
        self.scheme = scheme if scheme is not None else CouplingScheme.full()
        self.lo_start, self.lo_end, self.up_end = coupling_ranges(self.scheme, self.n_objects)
        upper = self.up_end - np.arange(self.n_objects) - 1
        self.offsets = np.concatenate([[0], np.cumsum(upper)[:-1]]).astype(np.int64)
        self.n_pairs = int(upper.sum())
        self.parallel = _use_parallel(self.n_pairs)

    def _coords(self, X):
        x = X.coords if isinstance(X, LatentConfig) else X
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n_objects:
            raise DimensionError(
                f"dissimilarities are {self.n_objects} x {self.n_objects} but X has shape {x.shape}"
            )
        return x

    @staticmethod
    def _sigma(sigma2):
        sigma2 = float(sigma2)
        if not (sigma2 > 0 and math.isfinite(sigma2)):
            raise DomainError(f"sigma2 must be positive and finite, got {sigma2!r}")
        return sigma2

    def log_likelihood(self, X, sigma2: float) -> float:
        x = self._coords(X)
        sigma2 = self._sigma(sigma2)
        kernel = _parallel_kernel("loglik") if self.parallel else _loglik_rows
        row_totals = np.empty(self.n_objects)
        kernel(self.delta, x, math.sqrt(sigma2), self.up_end, row_totals)
        const = self.n_pairs * 0.5 * (_LOG_2PI + math.log(sigma2))
        return -(const + _reduce_rows(row_totals))

    def gradient(self, X, sigma2: float) -> GradientResult:
        x = self._coords(X)
        sigma = math.sqrt(self._sigma(sigma2))
        if self.parallel:
            coef_kernel, gather_kernel = _parallel_kernel("grad_coef"), _parallel_kernel("grad_gather")
        else:
            coef_kernel, gather_kernel = _grad_coef, _grad_gather
        coef = np.empty(self.n_pairs)
        singular = np.empty(self.n_objects, dtype=np.int64)
        grad = np.empty_like(x)
        coef_kernel(self.delta, x, sigma, self.up_end, self.offsets, coef, singular)
        gather_kernel(x, self.lo_start, self.lo_end, self.up_end, self.offsets, coef, grad)
        return GradientResult(grad, int(singular.sum()))

    def row_log_likelihood(self, X, sigma2: float, n: int, x_n=None) -> float:
        x = self._coords(X)
        sigma2 = self._sigma(sigma2)
        xn = x[n] if x_n is None else np.ascontiguousarray(x_n, dtype=np.float64)
        total, m = _row_terms(
            self.delta, x, n, xn, math.sqrt(sigma2), self.lo_start, self.lo_end, self.up_end
        )
        return -(m * 0.5 * (_LOG_2PI + math.log(sigma2)) + total)


def log_likelihood(delta, X, sigma2: float, scheme: CouplingScheme | None = None) -> float:
    """Truncated-normal log-likelihood over the pairs retained by ``scheme``.

    Parameters
    ----------
    delta : DissimMatrix or (N, N) array
        Observed dissimilarities.
    X : LatentConfig or (N, D) array
        Latent coordinates.
    sigma2 : float
        Error variance, must be positive.
    scheme : CouplingScheme, optional
        Defaults to full coupling.
    """
    return SparseLikelihood(delta, scheme).log_likelihood(X, sigma2)


def grad_log_likelihood(
    delta, X, sigma2: float, scheme: CouplingScheme | None = None, return_info: bool = False
):
    """Gradient of :func:`log_likelihood` with respect to every row of X.

    A coupled pair at zero latent distance has no defined direction; its
    contribution is taken as zero and counted in ``n_singular`` (returned
    when ``return_info`` is true).
    """
    res = SparseLikelihood(delta, scheme).gradient(X, sigma2)
    return res if return_info else res.grad


def row_log_likelihood(delta, X, sigma2: float, scheme: CouplingScheme | None, n: int, x_n=None) -> float:
    """Sum of the log-likelihood terms that involve object ``n``.

    ``x_n`` replaces row ``n`` of X when given.  Differences of this
    quantity are exactly the likelihood part of a single-object MH ratio.
    """
    return SparseLikelihood(delta, scheme).row_log_likelihood(X, sigma2, n, x_n)


@dataclass(frozen=True)
class TimingRecord:
    n_objects: int
    scheme: str
    likelihood_seconds: float
    gradient_seconds: float
    reps: int


def eval_timer(delta, X, sigma2: float, scheme: CouplingScheme | None, reps: int = 5) -> TimingRecord:
    """Median wall time of one likelihood and one gradient evaluation.

    One warm-up call of each (which also triggers compilation) is excluded.
    """
    if reps < 3:
        raise ValueError("reps must be at least 3")
    lik_obj = SparseLikelihood(delta, scheme)
    lik_obj.log_likelihood(X, sigma2)
    lik_obj.gradient(X, sigma2)
    lik, grd = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        lik_obj.log_likelihood(X, sigma2)
        t1 = time.perf_counter()
        lik_obj.gradient(X, sigma2)
        t2 = time.perf_counter()
        lik.append(t1 - t0)
        grd.append(t2 - t1)
    n_obj = np.shape(X.coords if isinstance(X, LatentConfig) else X)[0]
    return TimingRecord(n_obj, str(lik_obj.scheme), statistics.median(lik), statistics.median(grd), reps)
