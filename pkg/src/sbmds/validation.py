"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .core import DissimMatrix, LatentConfig
from .exceptions import DimensionError, ValidationError


def check_dissimilarity(values, atol: float = 1e-8) -> np.ndarray:
    """Return a validated, symmetrised float64 copy of a dissimilarity matrix.

    Parameters
    ----------
    values : array-like or DissimMatrix
        Square matrix with zero diagonal and nonnegative entries.
    atol : float
        Largest tolerated asymmetry |a_ij - a_ji|.

    Raises
    ------
    ValidationError
        Naming the first offending entry.
    """
    if isinstance(values, DissimMatrix):
        return np.array(values.values)
    try:
        arr = check_array(values, dtype=np.float64, ensure_all_finite=False, ensure_min_samples=2)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return np.array(DissimMatrix(arr, atol=atol).values)


def check_latent(coords, n_objects: int | None = None, dim: int | None = None) -> np.ndarray:
    """Validate an (N, D) coordinate matrix, optionally against expected sizes."""
    arr = np.array(LatentConfig(coords).coords)
    if n_objects is not None and arr.shape[0] != n_objects:
        raise DimensionError(f"expected {n_objects} objects, got {arr.shape[0]}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionError(f"expected dimension {dim}, got {arr.shape[1]}")
    return arr
