"""Nearest-centroid classification of variable-length multivariate time
series under learnable time-weighted dynamic time warping."""

from .core import (
    CentroidSet,
    LogWeightSet,
    Tse,
    WarpingPath,
    resample_linear,
    validate_tse,
)
from .kernel import (
    batch_distances,
    decompose_path,
    dist_w_point,
    dtw_reference,
    dtw_wavefront,
    extract_path,
)

__version__ = "0.1.0"

__all__ = [
    "CentroidSet",
    "LogWeightSet",
    "Tse",
    "WarpingPath",
    "batch_distances",
    "decompose_path",
    "dist_w_point",
    "dtw_reference",
    "dtw_wavefront",
    "extract_path",
    "resample_linear",
    "validate_tse",
]
