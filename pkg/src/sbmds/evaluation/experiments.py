"""Desk-scale experiment runners that produce long-format result rows.

Each runner returns a list of flat dicts (one per experiment cell) that the
CLI writes straight to CSV.  Cells are independent given their seed.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import replace

import numpy as np

from ..core import CouplingScheme, pairwise_distances
from ..likelihood import SparseLikelihood
from ..samplers import PriorSpec, SamplerConfig, run_chain
from .diagnostics import ess, mean_mse
from .embedding import align_snapshots, classical_mds
from .simulate import SimSpec, simulate_dataset


def landmark_rule(n_objects: int, factor: float = 2.0) -> CouplingScheme:
    """``ceil(factor * sqrt(N))`` landmarks, capped at N."""
    return CouplingScheme.landmark(min(n_objects, math.ceil(factor * math.sqrt(n_objects))))


def aligned_location_error(samples, truth) -> float:
    """Max over objects of |posterior median of aligned location - truth|.

    Every snapshot is first moved onto ``truth`` by translation plus an
    orthogonal map (a sign flip in one dimension).
    """
    aligned = align_snapshots(samples, truth)
    med = np.median(aligned, axis=0)
    return float(np.max(np.linalg.norm(med - np.asarray(truth), axis=1)))


def consistency_experiment(
    n_list,
    coupling_rule=landmark_rule,
    config: SamplerConfig | None = None,
    sigma_true: float = 0.1,
    seed: int = 0,
    priors: PriorSpec | None = None,
):
    """Location error of one-dimensional fits as N grows.

    For each N a 1-D dataset is simulated (seeded by ``seed`` and N), fitted
    with ``coupling_rule(N)`` and scored with :func:`aligned_location_error`.
    """
    config = config if config is not None else SamplerConfig(iterations=3000, burn_in=1000, thin=5)
    rows = []
    for n in n_list:
        cell_seed = _cell_seed(seed, n)
        X, _, d_obs = simulate_dataset(SimSpec(n, 1, sigma_true, seed=cell_seed))
        scheme = coupling_rule(n)
        trace = run_chain(d_obs, scheme, priors, replace(config, seed=cell_seed), dim=1)
        rows.append(
            {
                "n": n,
                "seed": seed,
                "scheme": str(scheme),
                "sigma_true": sigma_true,
                "max_location_error": aligned_location_error(trace.samples, X),
                "accept_location": trace.acceptance["location"],
                "seconds": trace.wall_seconds,
            }
        )
    return rows


def elbow_experiment(
    n_objects: int,
    sigma_true: float,
    schemes,
    config: SamplerConfig | None = None,
    seed: int = 0,
    true_dim: int = 2,
    embed_dim: int = 2,
    noise_kind: str = "truncated-normal",
    max_pairs: int = 1000,
):
    """MSE-bar of fits on one simulated dataset under several coupling schemes."""
    config = config if config is not None else SamplerConfig()
    X, d_true, d_obs = simulate_dataset(SimSpec(n_objects, true_dim, sigma_true, noise_kind, seed))
    rows = []
    for scheme in schemes:
        if isinstance(scheme, str):
            scheme = CouplingScheme.parse(scheme, n_objects, embed_dim)
        if scheme.kind == "mds":
            continue
        trace = run_chain(d_obs, scheme, None, replace(config, seed=seed), dim=embed_dim)
        rows.append(
            {
                "n": n_objects,
                "seed": seed,
                "sigma_true": sigma_true,
                "true_dim": true_dim,
                "noise": noise_kind,
                "method": str(scheme),
                "couplings": SparseLikelihood(d_obs, scheme).n_pairs,
                "mse_bar": mean_mse(trace, d_true, max_pairs, np.random.default_rng(seed)),
                "accept_location": trace.acceptance["location"],
                "seconds": trace.wall_seconds,
            }
        )
    return rows


def misspecification_experiment(
    n_objects: int,
    true_dims,
    schemes=("full", "banded:20"),
    sigma_true: float = math.sqrt(0.2),
    config: SamplerConfig | None = None,
    seed: int = 0,
    embed_dim: int = 2,
):
    """MSE-bar when the true dimension exceeds the embedding dimension.

    Classical MDS is scored alongside the Bayesian fits as a single snapshot.
    """
    rows = []
    for true_dim in true_dims:
        cell_seed = _cell_seed(seed, true_dim)
        X, d_true, d_obs = simulate_dataset(SimSpec(n_objects, true_dim, sigma_true, seed=cell_seed))
        mds = classical_mds(d_obs, embed_dim)
        rows.append(
            {
                "n": n_objects,
                "seed": seed,
                "true_dim": true_dim,
                "method": "classical-mds",
                "mse_bar": mean_mse(mds[None], d_true, n_objects * n_objects),
            }
        )
        for cell in elbow_experiment(
            n_objects, sigma_true, schemes, config, cell_seed, true_dim, embed_dim,
            max_pairs=n_objects * n_objects,
        ):
            rows.append({k: cell[k] for k in ("n", "true_dim", "method", "mse_bar")} | {"seed": seed})
    return rows


def sampler_agreement_experiment(
    n_objects: int = 30,
    sigma_true: float = 0.2,
    n_pairs: int = 50,
    mh_config: SamplerConfig | None = None,
    hmc_config: SamplerConfig | None = None,
    seed: int = 0,
):
    """Compare MH and HMC posterior means of randomly chosen distances.

    Returns one row per pair with both means, their Monte-Carlo standard
    errors (posterior sd / sqrt(ESS)) and the standardized difference.
    """
    mh_config = mh_config or SamplerConfig(algorithm="mh", iterations=60000, burn_in=10000, thin=25)
    hmc_config = hmc_config or SamplerConfig(algorithm="hmc", iterations=6000, burn_in=1000, thin=5)
    _, _, d_obs = simulate_dataset(SimSpec(n_objects, 2, sigma_true, seed=seed))
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n_objects, 1)
    pick = np.sort(rng.choice(iu[0].size, size=n_pairs, replace=False))
    pi, pj = iu[0][pick], iu[1][pick]
    summaries = {}
    for name, cfg in (("mh", mh_config), ("hmc", hmc_config)):
        trace = run_chain(d_obs, CouplingScheme.full(), None, replace(cfg, seed=seed + 1))
        dist = np.linalg.norm(trace.samples[:, pi] - trace.samples[:, pj], axis=2)
        ess_vals = np.array([ess(col) for col in dist.T])
        summaries[name] = {
            "mean": dist.mean(axis=0),
            "se": dist.std(axis=0, ddof=1) / np.sqrt(ess_vals),
            "ess": ess_vals,
            "ess_sigma2": ess(trace.sigma2),
        }
    mh, hmc = summaries["mh"], summaries["hmc"]
    z = (mh["mean"] - hmc["mean"]) / np.sqrt(mh["se"] ** 2 + hmc["se"] ** 2)
    return [
        {
            "pair": f"{a + 1}-{b + 1}",
            "mh_mean": mh["mean"][k],
            "hmc_mean": hmc["mean"][k],
            "mh_se": mh["se"][k],
            "hmc_se": hmc["se"][k],
            "mh_ess": mh["ess"][k],
            "hmc_ess": hmc["ess"][k],
            "mh_ess_sigma2": mh["ess_sigma2"],
            "hmc_ess_sigma2": hmc["ess_sigma2"],
            "z": z[k],
        }
        for k, (a, b) in enumerate(zip(pi, pj))
    ]


def timing_experiment(n_list, schemes, reps: int = 5, seed: int = 0, dim: int = 2):
    """Median seconds per likelihood and gradient evaluation, long format."""
    from ..likelihood import eval_timer

    rows = []
    rng = np.random.default_rng(seed)
    for n in n_list:
        X = rng.standard_normal((n, dim))
        delta = pairwise_distances(X)
        for text in schemes:
            scheme = _resolve_scheme(text, n, dim)
            rec = eval_timer(delta, X, 0.04, scheme, reps)
            for op, secs in (("likelihood", rec.likelihood_seconds), ("gradient", rec.gradient_seconds)):
                rows.append({"n": n, "scheme": text, "resolved": str(scheme), "op": op, "seconds_median": secs})
    return rows


def _resolve_scheme(text, n, dim):
    text = text.strip().lower()
    # allow sizes relative to N such as "banded:n-1" or "landmark:n"
    kind, _, size = text.partition(":")
    rel = re.fullmatch(r"n\s*(?:-\s*(\d+))?", size.strip())
    if rel:
        text = f"{kind}:{n - int(rel.group(1) or 0)}"
    return CouplingScheme.parse(text, n, dim)


def _cell_seed(seed, *key):
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
