"""Classical (Torgerson) MDS and orthogonal Procrustes alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DissimMatrix, LatentConfig
from ..exceptions import ConfigurationError, DimensionError, NumericalError


def classical_mds(delta, dim: int) -> np.ndarray:
    """Embed a dissimilarity matrix in ``dim`` dimensions by double centering.

    Parameters
    ----------
    delta : DissimMatrix or (N, N) array
    dim : int
        Embedding dimension; N must be at least ``dim + 1``.

    Returns
    -------
    (N, dim) array
        ``V_D diag(sqrt(lambda_D))`` from the top ``dim`` eigenpairs of
        ``-0.5 J delta**2 J``.  Columns whose eigenvalue is negative are
        zeroed.

    Raises
    ------
    NumericalError
        When the eigen-solver fails; callers should fall back to a random
        initialisation.
    """
    values = delta.values if isinstance(delta, DissimMatrix) else np.asarray(delta, dtype=float)
    n = values.shape[0]
    if dim < 1 or n < dim + 1:
        raise ConfigurationError(f"classical MDS needs N >= dim + 1, got N={n}, dim={dim}")
    sq = values**2
    # J sq J without forming J
    row_mean = sq.mean(axis=1)
    b = -0.5 * (sq - row_mean[:, None] - row_mean[None, :] + sq.mean())
    b = 0.5 * (b + b.T)
    try:
        evals, evecs = np.linalg.eigh(b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed ({exc}); use a random initialisation") from exc
    if not np.all(np.isfinite(evals)):
        raise NumericalError("eigendecomposition returned non-finite values; use a random initialisation")
    order = np.argsort(evals)[::-1][:dim]
    lam = np.clip(evals[order], 0.0, None)
    vecs = evecs[:, order]
    # fix the sign of each axis so results do not depend on LAPACK internals
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(dim)])
    flip[flip == 0] = 1.0
    return vecs * flip * np.sqrt(lam)


@dataclass
class ProcrustesResult:
    aligned: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    objective: float
    degenerate: bool


def procrustes_align(reference, target, return_info: bool = False):
    """Rigidly move ``target`` onto ``reference``.

    Finds the translation and orthogonal map (rotations and reflections,
    no scaling) minimising the Frobenius distance.  Pairwise distances of
    ``target`` are preserved.  A rank-deficient cross-covariance still
    yields a minimiser; ``degenerate`` is then set in the returned info.
    """
    ref = reference.coords if isinstance(reference, LatentConfig) else np.asarray(reference, dtype=float)
    tgt = target.coords if isinstance(target, LatentConfig) else np.asarray(target, dtype=float)
    if ref.shape != tgt.shape or ref.ndim != 2:
        raise DimensionError(f"shape mismatch: reference {ref.shape}, target {tgt.shape}")
    ref_mean = ref.mean(axis=0)
    tgt_mean = tgt.mean(axis=0)
    cross = (tgt - tgt_mean).T @ (ref - ref_mean)
    u, s, vt = np.linalg.svd(cross)
    rotation = u @ vt
    aligned = (tgt - tgt_mean) @ rotation + ref_mean
    if not return_info:
        return aligned
    tol = max(cross.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    degenerate = bool(s.size == 0 or s[-1] <= tol)
    objective = float(np.sum((aligned - ref) ** 2))
    return ProcrustesResult(aligned, rotation, ref_mean - tgt_mean @ rotation, objective, degenerate)


def align_snapshots(samples, reference) -> np.ndarray:
    """Procrustes-align every (N, D) snapshot of ``samples`` onto ``reference``."""
    samples = np.asarray(samples, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if samples.ndim != 3 or samples.shape[1:] != reference.shape:
        raise DimensionError(f"reference shape {reference.shape} does not match snapshots {samples.shape[1:]}")
    return np.stack([procrustes_align(reference, snap) for snap in samples])


def summarize_aligned(samples, reference=None, summary: str = "mean") -> np.ndarray:
    """Per-object posterior summary after aligning all snapshots.

    ``reference`` defaults to the first snapshot.  ``summary`` is
    ``"mean"`` or ``"median"`` (coordinate-wise).
    """
    samples = np.asarray(samples, dtype=float)
    reference = samples[0] if reference is None else reference
    aligned = align_snapshots(samples, reference)
    if summary == "mean":
        return aligned.mean(axis=0)
    if summary == "median":
        return np.median(aligned, axis=0)
    raise ConfigurationError(f"summary must be 'mean' or 'median', got {summary!r}")
