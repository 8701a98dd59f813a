"""End-to-end checks of the library against fixed targets.

Each ``check_*`` function runs one self-contained experiment and returns a
:class:`CheckResult` with a pass flag and the numbers behind it.  The
command line exposes them through ``sbmds experiment``; the test suite
asserts on the same results.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import ortho_group

from ..core import CouplingScheme, pairwise_distances
from ..likelihood import SparseLikelihood, coupling_pairs, eval_timer
from ..samplers import SamplerConfig
from .diagnostics import ess, hellinger
from .embedding import procrustes_align
from .experiments import consistency_experiment, elbow_experiment, sampler_agreement_experiment

# Five-object worked example: observed dissimilarities, latent locations,
# sigma^2 = 0.25, and log-likelihoods for 1..4 bands / landmarks.
WORKED_DELTA = np.array(
    [
        [0.00, 1.35, 2.53, 0.99, 1.85],
        [1.35, 0.00, 1.54, 0.76, 0.50],
        [2.53, 1.54, 0.00, 1.54, 1.26],
        [0.99, 0.76, 1.54, 0.00, 1.12],
        [1.85, 0.50, 1.26, 1.12, 0.00],
    ]
)
WORKED_X = np.array([[0.59, 0.71], [-0.11, -0.45], [0.61, -1.82], [0.63, -0.28], [-0.28, -0.92]])
WORKED_SIGMA2 = 0.25
WORKED_BANDED = (-0.885, -1.490, -1.743, -1.969)
WORKED_LANDMARK = (-0.875, -1.311, -1.756, -1.969)


@dataclass
class CheckResult:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.summary}; {self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ----------------------------------------------------------------------------
# oracles


def naive_log_likelihood(delta, X, sigma2, pairs):
    """Direct double loop over ``pairs`` with scipy's log_ndtr."""
    sigma = math.sqrt(sigma2)
    total = 0.0
    for i, j in pairs:
        dstar = math.sqrt(sum((X[i, d] - X[j, d]) ** 2 for d in range(X.shape[1])))
        total -= (
            0.5 * math.log(2 * math.pi * sigma2)
            + (delta[i, j] - dstar) ** 2 / (2 * sigma2)
            + float(log_ndtr(dstar / sigma))
        )
    return total


def naive_gradient(delta, X, sigma2, pairs):
    """Direct double loop for the gradient, using phi/Phi from scipy."""
    sigma = math.sqrt(sigma2)
    grad = np.zeros_like(X, dtype=float)
    for i, j in pairs:
        diff = X[i] - X[j]
        dstar = math.sqrt(float(diff @ diff))
        z = dstar / sigma
        mills = math.exp(-0.5 * z * z - float(log_ndtr(z))) / math.sqrt(2 * math.pi)
        r = ((dstar - delta[i, j]) / sigma2 + mills / sigma) * diff / dstar
        grad[i] -= r
        grad[j] += r
    return grad


def central_difference(fn, X, h):
    out = np.empty_like(X)
    for idx in np.ndindex(X.shape):
        up = X.copy()
        dn = X.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (fn(up) - fn(dn)) / (2 * h)
    return out


def grid_procrustes_objective(reference, target, step=1e-4):
    """Smallest residual over a rotation-angle grid, with and without reflection."""
    ref = reference - reference.mean(axis=0)
    tgt = target - target.mean(axis=0)
    theta = np.arange(0.0, 2 * np.pi, step)
    c, s = np.cos(theta), np.sin(theta)
    best = np.inf
    for flip in (1.0, -1.0):
        t = tgt * np.array([1.0, flip])
        # rows of t rotated by theta: (x c - y s, x s + y c)
        rx = np.outer(c, t[:, 0]) - np.outer(s, t[:, 1])
        ry = np.outer(s, t[:, 0]) + np.outer(c, t[:, 1])
        obj = np.sum((rx - ref[:, 0]) ** 2 + (ry - ref[:, 1]) ** 2, axis=1)
        best = min(best, float(obj.min()))
    return best


def loglog_slope(n_values, seconds):
    return float(np.polyfit(np.log(n_values), np.log(seconds), 1)[0])


# ----------------------------------------------------------------------------
# checks


@_timed
def check_worked_example(tol=0.05):
    """Worked five-object log-likelihoods and agreement of the complete schemes."""
    got_b, got_l = [], []
    for k in range(1, 5):
        got_b.append(SparseLikelihood(WORKED_DELTA, CouplingScheme.banded(k)).log_likelihood(WORKED_X, WORKED_SIGMA2))
        got_l.append(SparseLikelihood(WORKED_DELTA, CouplingScheme.landmark(k)).log_likelihood(WORKED_X, WORKED_SIGMA2))
    full = SparseLikelihood(WORKED_DELTA).log_likelihood(WORKED_X, WORKED_SIGMA2)
    err = max(abs(a - b) for a, b in zip(got_b + got_l, WORKED_BANDED + WORKED_LANDMARK))
    spread = max(abs(got_b[-1] - full), abs(got_l[-1] - full)) / abs(full)
    passed = err <= tol and spread <= 1e-12
    return CheckResult(
        "worked-example",
        passed,
        f"max |error| {err:.4f} <= {tol}, complete-scheme spread {spread:.1e} <= 1e-12",
        {"banded": got_b, "landmark": got_l, "full": full, "max_error": err, "spread": spread},
    )


@_timed
def check_gradient(n_instances=20, n_objects=20, dim=3, seed=0, tol=1e-6):
    """Analytic gradient against central differences on random instances.

    The relative error of one instance is ``max|g - fd| / max|fd|``.
    """
    rng = np.random.default_rng(seed)
    schemes = [CouplingScheme.full(), CouplingScheme.banded(5), CouplingScheme.landmark(5)]
    worst = 0.0
    for k in range(n_instances):
        sigma = (0.1, 1.0)[k % 2]
        X = rng.standard_normal((n_objects, dim))
        delta = pairwise_distances(rng.standard_normal((n_objects, dim)))
        for scheme in schemes:
            lik = SparseLikelihood(delta, scheme)
            g = lik.gradient(X, sigma**2).grad
            fd = central_difference(lambda Z: lik.log_likelihood(Z, sigma**2), X, 1e-5)
            worst = max(worst, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))
    return CheckResult("gradient", worst < tol, f"max relative error {worst:.2e} < {tol}", {"max_rel_error": worst})


@_timed
def check_equivalence(n_range=range(3, 13), seed=0, tol=1e-12):
    """Complete banded and landmark schemes against the naive double loop."""
    rng = np.random.default_rng(seed)
    worst_ll = worst_g = 0.0
    for n in n_range:
        X = rng.standard_normal((n, 2))
        delta = pairwise_distances(rng.standard_normal((n, 2)))
        sigma2 = float(rng.uniform(0.05, 2.0))
        pairs = list(zip(*coupling_pairs(CouplingScheme.full(), n)))
        ll_ref = naive_log_likelihood(delta, X, sigma2, pairs)
        g_ref = naive_gradient(delta, X, sigma2, pairs)
        for scheme in (CouplingScheme.banded(n - 1), CouplingScheme.landmark(n)):
            lik = SparseLikelihood(delta, scheme)
            worst_ll = max(worst_ll, abs(lik.log_likelihood(X, sigma2) - ll_ref) / abs(ll_ref))
            g = lik.gradient(X, sigma2).grad
            worst_g = max(worst_g, float(np.max(np.abs(g - g_ref)) / max(1.0, np.max(np.abs(g_ref)))))
    passed = worst_ll <= tol and worst_g <= tol
    return CheckResult(
        "equivalence",
        passed,
        f"log-likelihood rel {worst_ll:.1e}, gradient rel {worst_g:.1e} (<= {tol})",
        {"loglik_rel": worst_ll, "grad_rel": worst_g},
    )


@_timed
def check_invariance(n_objects=100, seed=0, tol=1e-10):
    """Log-likelihood under a random orthogonal map plus translation."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_objects, 2))
    delta = pairwise_distances(X + 0.1 * rng.standard_normal(X.shape))
    Q = ortho_group.rvs(2, random_state=rng)
    moved = X @ Q + rng.normal(size=2) * 5
    worst = 0.0
    for scheme in (CouplingScheme.full(), CouplingScheme.banded(5), CouplingScheme.landmark(5)):
        lik = SparseLikelihood(delta, scheme)
        a, b = lik.log_likelihood(X, 0.3), lik.log_likelihood(moved, 0.3)
        worst = max(worst, abs(a - b) / abs(a))
    return CheckResult("invariance", worst < tol, f"max relative change {worst:.1e} < {tol}", {"max_rel": worst})


def _op_seconds(n, scheme, reps, rng, dim=2):
    X = rng.standard_normal((n, dim))
    delta = pairwise_distances(X + 0.05 * rng.standard_normal(X.shape))
    rec = eval_timer(delta, X, 0.04, scheme, reps)
    return rec.likelihood_seconds, rec.gradient_seconds


@_timed
def check_speedup(seed=0, reps=3):
    """Full versus banded likelihood+gradient time.

    Targets: 50 bands at N = 500, 1000, 5000 give >= 2, 5, 20 fold and
    5 bands at N = 10000 gives >= 50 fold.
    """
    rng = np.random.default_rng(seed)
    cases = [(500, 50, 2.0), (1000, 50, 5.0), (5000, 50, 20.0), (10000, 5, 50.0)]
    rows, passed = [], True
    for n, bands, target in cases:
        full = sum(_op_seconds(n, CouplingScheme.full(), reps, rng))
        sparse = sum(_op_seconds(n, CouplingScheme.banded(bands), reps, rng))
        ratio = full / sparse
        passed &= ratio >= target
        rows.append({"n": n, "bands": bands, "full_seconds": full, "banded_seconds": sparse, "ratio": ratio, "target": target})
    text = ", ".join(f"N={r['n']} B={r['bands']}: {r['ratio']:.1f}x (>= {r['target']:g})" for r in rows)
    return CheckResult("speedup", bool(passed), text, {"rows": rows})


@_timed
def check_scaling(n_list=(500, 1000, 2000, 4000), seed=0, reps=7):
    """Log-log slope of gradient time against N for Banded(10) and Full."""
    rng = np.random.default_rng(seed)
    banded = [_op_seconds(n, CouplingScheme.banded(10), reps, rng)[1] for n in n_list]
    full = [_op_seconds(n, CouplingScheme.full(), max(3, reps // 2), rng)[1] for n in n_list]
    sb, sf = loglog_slope(n_list, banded), loglog_slope(n_list, full)
    passed = 0.8 <= sb <= 1.3 and 1.7 <= sf <= 2.3
    return CheckResult(
        "scaling",
        passed,
        f"banded:10 slope {sb:.2f} in [0.8, 1.3], full slope {sf:.2f} in [1.7, 2.3]",
        {"n": list(n_list), "banded_seconds": banded, "full_seconds": full, "banded_slope": sb, "full_slope": sf},
    )


ELBOW_CONFIG = SamplerConfig(iterations=11000, burn_in=1000, thin=10)


@_timed
def check_elbow(seeds=range(5), config=ELBOW_CONFIG, n_objects=100, sigma_true=0.2, need=4):
    """MSE-bar of Banded(10) within 2x and Banded(20) within 1.25x of Full."""
    rows, wins = [], 0
    for seed in seeds:
        cells = elbow_experiment(n_objects, sigma_true, ["full", "banded:10", "banded:20"], config, seed)
        mse = {c["method"]: c["mse_bar"] for c in cells}
        r10, r20 = mse["banded:10"] / mse["full"], mse["banded:20"] / mse["full"]
        ok = r10 <= 2.0 and r20 <= 1.25
        wins += ok
        rows.append({"seed": seed, **mse, "ratio_10": r10, "ratio_20": r20, "ok": ok})
    text = f"{wins}/{len(rows)} seeds meet both ratios (need {need}); " + ", ".join(
        f"s{r['seed']}: {r['ratio_10']:.2f}/{r['ratio_20']:.2f}" for r in rows
    )
    return CheckResult("elbow", wins >= need, text, {"rows": rows})


CONSISTENCY_CONFIG = SamplerConfig(iterations=3000, burn_in=750, thin=5)


@_timed
def check_consistency(seeds=range(10), config=CONSISTENCY_CONFIG, sigma_true=0.1, need=8):
    """Max aligned location error shrinks from N=50 to N=200 (1-D, 2*sqrt(N) landmarks)."""
    rows, wins = [], 0
    for seed in seeds:
        cells = consistency_experiment([50, 200], config=config, sigma_true=sigma_true, seed=seed)
        e50, e200 = cells[0]["max_location_error"], cells[1]["max_location_error"]
        wins += e200 < e50
        rows.append({"seed": seed, "error_50": e50, "error_200": e200})
    return CheckResult(
        "consistency", wins >= need, f"error decreased in {wins}/{len(rows)} seeds (need {need})", {"rows": rows}
    )


@_timed
def check_samplers(seed=0, z_max=3.0, min_ess=100.0):
    """MH and HMC posterior means of 50 distances agree within 3 combined standard errors."""
    rows = sampler_agreement_experiment(seed=seed)
    z = max(abs(r["z"]) for r in rows)
    ess_floor = min(min(r["mh_ess"], r["hmc_ess"], r["mh_ess_sigma2"], r["hmc_ess_sigma2"]) for r in rows)
    passed = z <= z_max and ess_floor >= min_ess
    return CheckResult(
        "samplers", passed, f"max |z| {z:.2f} <= {z_max}, min ESS {ess_floor:.0f} >= {min_ess:g}", {"rows": rows}
    )


@_timed
def check_diagnostics(seed=0):
    """ESS on AR(1), Gaussian Hellinger closed form and Procrustes grid search."""
    rng = np.random.default_rng(seed)
    S = 100_000
    eps = rng.standard_normal(S)
    ar = np.empty(S)
    ar[0] = eps[0] / math.sqrt(1 - 0.25)
    for t in range(1, S):
        ar[t] = 0.5 * ar[t - 1] + eps[t]
    ess_rel = abs(ess(ar) / (S / 3) - 1)
    h = hellinger(rng.standard_normal(1_000_000), rng.standard_normal(1_000_000) + 1.0)
    h_err = abs(h - math.sqrt(1 - math.exp(-1 / 8)))
    ref = rng.standard_normal((8, 2))
    tgt = rng.standard_normal((8, 2))
    obj = procrustes_align(ref, tgt, return_info=True).objective
    proc_err = abs(obj - grid_procrustes_objective(ref, tgt))
    passed = ess_rel <= 0.10 and h_err <= 0.01 and proc_err <= 1e-6
    return CheckResult(
        "diagnostics",
        passed,
        f"ESS off by {100 * ess_rel:.1f}% (<= 10%), Hellinger off by {h_err:.4f} (<= 0.01), "
        f"Procrustes off by {proc_err:.1e} (<= 1e-6)",
        {"ess_rel": ess_rel, "hellinger": h, "hellinger_err": h_err, "procrustes_err": proc_err},
    )


ALL_CHECKS = {
    "worked-example": check_worked_example,
    "gradient": check_gradient,
    "equivalence": check_equivalence,
    "invariance": check_invariance,
    "speedup": check_speedup,
    "scaling": check_scaling,
    "elbow": check_elbow,
    "consistency": check_consistency,
    "samplers": check_samplers,
    "diagnostics": check_diagnostics,
}
