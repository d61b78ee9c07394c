"""Saliency heatmap normalization and per-superpixel averaging."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, NonFiniteInputError
from .features import upsample
from .superpixels import SuperpixelPartition


def minmax_normalize(s) -> np.ndarray:
    """Rescale to [0, 1]; a constant map collapses to all zeros."""
    arr = np.asarray(s, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError("saliency map contains non-finite values")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / np.float32(hi - lo)


def component_means(s, partition: SuperpixelPartition) -> np.ndarray:
    """Mean saliency per component, resizing the map to the partition first."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"saliency map must be 2-D, got {arr.shape}")
    if arr.shape != partition.label_map.shape:
        arr = upsample(arr[None], partition.label_map.shape, mode="bicubic")[0].astype(np.float64)
    flat = partition.label_map.ravel()
    sums = np.bincount(flat, weights=arr.ravel(), minlength=partition.component_count)
    return sums / partition.component_sizes


def superpixelify(s, partition: SuperpixelPartition) -> np.ndarray:
    """Replace each pixel's saliency by the mean over its component."""
    means = component_means(s, partition)
    return means[partition.label_map].astype(np.float32)
