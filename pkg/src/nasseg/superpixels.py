"""Superpixels: connected components of a cluster-label map, label-map
resizing, and boundary-frequency overlays across repeated segmentations.

One cluster can be spatially disconnected, so cluster ids and component ids
are kept as two views: ``parent_cluster`` maps each component back to the
cluster it came from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError
from .features import nearest_indices

_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


@dataclass
class SuperpixelPartition:
    label_map: np.ndarray  # [H, W] int32 component ids, consecutive from 0
    component_count: int
    parent_cluster: np.ndarray  # [component_count] original cluster id
    component_sizes: np.ndarray  # [component_count] pixel counts

    @property
    def height(self) -> int:
        return self.label_map.shape[0]

    @property
    def width(self) -> int:
        return self.label_map.shape[1]


def connected_components(label_map, connectivity: int = 4) -> SuperpixelPartition:
    """Split a cluster-label map into connected components.

    Component ids are assigned by the raster position of each component's
    first pixel.
    """
    arr = np.asarray(label_map)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"label map must be 2-D, got shape {arr.shape}")
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURES[connectivity]

    comp = np.full(arr.shape, -1, dtype=np.int64)
    parents: list[int] = []
    offset = 0
    for value in np.unique(arr):
        mask = arr == value
        labeled, count = ndimage.label(mask, structure=structure)
        comp[mask] = labeled[mask] + offset - 1
        parents.extend([int(value)] * count)
        offset += count

    flat = comp.ravel()
    ids, first = np.unique(flat, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(offset, dtype=np.int32)
    remap[ids[order]] = np.arange(offset, dtype=np.int32)
    new_map = remap[flat].reshape(arr.shape)

    parent_arr = np.asarray(parents, dtype=np.int32)[ids[order]]
    sizes = np.bincount(new_map.ravel(), minlength=offset).astype(np.int64)
    return SuperpixelPartition(
        label_map=new_map,
        component_count=offset,
        parent_cluster=parent_arr,
        component_sizes=sizes,
    )


def upsample_labels_nearest(label_map, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor label-map resize with half-pixel-center mapping."""
    arr = np.asarray(label_map)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"label map must be 2-D, got shape {arr.shape}")
    iy = nearest_indices(arr.shape[0], int(target[0]))
    ix = nearest_indices(arr.shape[1], int(target[1]))
    return np.ascontiguousarray(arr[iy[:, None], ix[None, :]])


def boundary_mask(label_map) -> np.ndarray:
    """True where a pixel has a 4-neighbor with a different label."""
    arr = np.asarray(label_map)
    mask = np.zeros(arr.shape, dtype=bool)
    vert = arr[1:, :] != arr[:-1, :]
    mask[1:, :] |= vert
    mask[:-1, :] |= vert
    horiz = arr[:, 1:] != arr[:, :-1]
    mask[:, 1:] |= horiz
    mask[:, :-1] |= horiz
    return mask


def boundary_frequency(maps: list[np.ndarray]) -> np.ndarray:
    """Per-pixel fraction of maps in which the pixel sits on a boundary."""
    if not maps:
        raise DimensionMismatchError("need at least one label map")
    shape = np.asarray(maps[0]).shape
    acc = np.zeros(shape, dtype=np.float64)
    for m in maps:
        arr = np.asarray(m)
        if arr.shape != shape:
            raise DimensionMismatchError(f"map shape {arr.shape} != {shape}")
        acc += boundary_mask(arr)
    return (acc / len(maps)).astype(np.float32)
