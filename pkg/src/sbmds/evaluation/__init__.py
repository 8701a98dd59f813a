"""Data simulation and diagnostics, plus embedding helpers and experiment runners."""

from .diagnostics import (
    MetricReport,
    autocorrelation,
    ess,
    ess_per_hour,
    hellinger,
    mean_mse,
    min_ess,
    min_ess_per_hour,
    monitored_series,
)
from .embedding import ProcrustesResult, align_snapshots, classical_mds, procrustes_align, summarize_aligned
from .simulate import SimSpec, simulate_dataset

__all__ = [
    "MetricReport",
    "ProcrustesResult",
    "SimSpec",
    "align_snapshots",
    "autocorrelation",
    "classical_mds",
    "ess",
    "ess_per_hour",
    "hellinger",
    "mean_mse",
    "min_ess",
    "min_ess_per_hour",
    "monitored_series",
    "procrustes_align",
    "simulate_dataset",
    "summarize_aligned",
]
