"""Activation aggregation: upsample, flatten, normalize, weight, concatenate.

Each selected activation tensor [c, h, w] is bicubically upsampled to the
output resolution, flattened to one row per pixel (row index = y*W + x),
optionally row-L2-normalized, optionally divided by (1 + c), and the blocks
are concatenated along columns. Clustering the rows of the resulting matrix
segments the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteInputError, ShapeMismatchError

BICUBIC_A = -0.75


@dataclass
class NasConfig:
    """Parameters of the activation-clustering segmentation."""

    output_h: int
    output_w: int
    depths: list[int]
    k: int
    scale_rows: bool = True
    weight_channels: bool = True
    eps: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        self.depths = list(self.depths)
        if not self.depths:
            raise ValueError("depths must be non-empty")
        if any(b <= a for a, b in zip(self.depths, self.depths[1:])):
            raise ValueError(f"depths must be strictly increasing, got {self.depths}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.output_h * self.output_w < self.k:
            raise ValueError(
                f"output {self.output_h}x{self.output_w} has fewer pixels than k={self.k}"
            )
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class FeatureMatrix:
    """Per-pixel feature rows pooled over the selected depths."""

    data: np.ndarray  # [rows, cols] float32
    per_depth_cols: list[int]
    output_h: int
    output_w: int

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def _cubic_kernel(t: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    at = np.abs(t)
    near = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    far = a * at**3 - 5.0 * a * at**2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _bicubic_weights(in_size: int, out_size: int) -> np.ndarray:
    """Dense [out, in] weight matrix for 1-D cubic resampling.

    Half-pixel-center mapping with edge-clamped taps; clamped taps accumulate
    onto the border sample.
    """
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    mat = np.zeros((out_size, in_size))
    for k in (-1, 0, 1, 2):
        w = _cubic_kernel(frac - k)
        idx = np.clip(base + k, 0, in_size - 1)
        np.add.at(mat, (np.arange(out_size), idx), w)
    return mat


def nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    """Source index per target position: floor of the mapped pixel center."""
    scale = in_size / out_size
    idx = np.floor((np.arange(out_size) + 0.5) * scale).astype(np.int64)
    return np.clip(idx, 0, in_size - 1)


def upsample(t: np.ndarray, target: tuple[int, int], mode: str = "bicubic") -> np.ndarray:
    """Resize a [c, h, w] tensor to [c, H, W].

    ``bicubic`` uses the a=-0.75 convolution kernel with half-pixel-center
    coordinates and edge clamping; ``nearest`` maps each target pixel to the
    floor of its mapped center.
    """
    t = np.asarray(t)
    if t.ndim != 3:
        raise ShapeMismatchError(f"expected [c, h, w], got shape {t.shape}")
    out_h, out_w = int(target[0]), int(target[1])
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(f"target size must be >= 1, got {target}")
    c, h, w = t.shape

    if mode == "nearest":
        iy = nearest_indices(h, out_h)
        ix = nearest_indices(w, out_w)
        return np.ascontiguousarray(t[:, iy[:, None], ix[None, :]])
    if mode != "bicubic":
        raise ValueError(f"unknown mode {mode!r}")

    mh = _bicubic_weights(h, out_h)
    mw = _bicubic_weights(w, out_w)
    # rows: [c,h,w] x [H,h] -> [c,w,H]; cols: x [W,w] -> [c,H,W]
    tmp = np.tensordot(t.astype(np.float64), mh, axes=([1], [1]))
    out = np.tensordot(tmp.transpose(0, 2, 1), mw, axes=([2], [1]))
    return np.ascontiguousarray(out.astype(t.dtype if t.dtype.kind == "f" else np.float32))


def row_l2_normalize(m: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Divide each row by max(its L2 norm, eps). Zero rows stay zero."""
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise NonFiniteInputError("matrix contains non-finite values")
    norms = np.sqrt(np.einsum("ij,ij->i", m.astype(np.float64), m.astype(np.float64)))
    return (m / np.maximum(norms, eps)[:, None]).astype(m.dtype)


def build_feature_matrix(acts: list[np.ndarray], cfg: NasConfig) -> FeatureMatrix:
    """Aggregate one activation tensor per configured depth into feature rows."""
    if len(acts) != len(cfg.depths):
        raise ShapeMismatchError(
            f"got {len(acts)} activation tensors for {len(cfg.depths)} depths"
        )
    blocks = []
    per_depth_cols = []
    for t in acts:
        t = np.asarray(t, dtype=np.float32)
        if t.ndim != 3:
            raise ShapeMismatchError(f"activations must be [c, h, w], got {t.shape}")
        c = t.shape[0]
        up = upsample(t, (cfg.output_h, cfg.output_w), mode="bicubic")
        block = up.reshape(c, cfg.output_h * cfg.output_w).T
        if cfg.scale_rows:
            block = row_l2_normalize(block, cfg.eps)
        if cfg.weight_channels:
            block = block / np.float32(1 + c)
        blocks.append(block.astype(np.float32))
        per_depth_cols.append(c)
    data = np.ascontiguousarray(np.concatenate(blocks, axis=1))
    return FeatureMatrix(
        data=data,
        per_depth_cols=per_depth_cols,
        output_h=cfg.output_h,
        output_w=cfg.output_w,
    )


def segment(
    acts: list[np.ndarray],
    cfg: NasConfig,
    clusterer: str = "kmeans",
    max_iter: int = 300,
    tol: float = 1e-4,
) -> np.ndarray:
    """Run the full activation-clustering segmentation.

    Returns the [H, W] int32 cluster-label map. Connected components are a
    separate step (see :mod:`nasseg.superpixels`).
    """
    from . import clustering

    fm = build_feature_matrix(acts, cfg)
    if clusterer == "kmeans":
        model = clustering.kmeans_fit(fm, cfg.k, seed=cfg.seed, max_iter=max_iter, tol=tol)
        labels = model.labels
    elif clusterer == "ward":
        dendro = clustering.ward_fit(fm.data)
        labels = clustering.cut_dendrogram(dendro, cfg.k)
    else:
        raise ValueError(f"unknown clusterer {clusterer!r}")
    return labels.reshape(cfg.output_h, cfg.output_w).astype(np.int32)
