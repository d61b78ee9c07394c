"""Weakly supervised localization scoring: IoU, threshold sweeps, MaxBoxAccV2.

Heatmaps are min-max normalized, binarized at every threshold in a grid over
[0, 1], split into 8-connected foreground blobs whose tight bounding boxes are
matched against a single ground-truth box per image. For each IoU level δ the
score is 100 times the best (over thresholds) fraction of images whose best
box reaches IoU ≥ δ; MaxBoxAccV2 averages the three levels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import LengthMismatchError
from .saliency import minmax_normalize

_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box over pixel indices, inclusive-exclusive on both axes."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass
class WsolConfig:
    thresholds: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 101))
    iou_levels: tuple = (0.30, 0.50, 0.70)

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if self.thresholds.size == 0 or np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be a non-empty increasing grid")
        if len(self.iou_levels) == 0 or any(
            b <= a for a, b in zip(self.iou_levels, self.iou_levels[1:])
        ):
            raise ValueError("iou_levels must be non-empty and increasing")


@dataclass
class WsolScores:
    per_level: dict  # round(δ, 2) -> 100 · max over τ of BoxAcc(τ, δ)
    mean: float  # MaxBoxAccV2
    box_acc: np.ndarray  # [n_thresholds, n_levels] raw fractions
    thresholds: np.ndarray
    iou_levels: tuple


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def boxes_from_heatmap(heatmap, tau: float, connectivity: int = 8) -> list[BBox]:
    """Tight boxes of the connected foreground blobs of ``heatmap >= tau``."""
    hm = np.asarray(heatmap, dtype=np.float64)
    fg = hm >= tau
    if not fg.any():
        return []
    labeled, count = ndimage.label(fg, structure=_STRUCTURES[connectivity])
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        ys, xs = sl
        boxes.append(BBox(x_min=xs.start, y_min=ys.start, x_max=xs.stop, y_max=ys.stop))
    return boxes


def max_box_acc_v2(heatmaps, gt_boxes, cfg: WsolConfig | None = None,
                   connectivity: int = 8, normalize: bool = True) -> WsolScores:
    """Score heatmaps against one ground-truth box per image.

    Heatmaps are min-max normalized first (set ``normalize=False`` if the
    caller already did), so the threshold grid over [0, 1] always covers the
    full value range.
    """
    if len(heatmaps) != len(gt_boxes):
        raise LengthMismatchError(
            f"{len(heatmaps)} heatmaps vs {len(gt_boxes)} ground-truth boxes"
        )
    if len(heatmaps) == 0:
        raise LengthMismatchError("need at least one image")
    cfg = cfg or WsolConfig()
    taus = cfg.thresholds
    # best_iou[i, t]: best box-vs-gt IoU of image i binarized at taus[t]
    best_iou = np.zeros((len(heatmaps), len(taus)), dtype=np.float64)
    for i, (hm, gt) in enumerate(zip(heatmaps, gt_boxes)):
        hm = minmax_normalize(hm) if normalize else np.asarray(hm, dtype=np.float64)
        for t, tau in enumerate(taus):
            boxes = boxes_from_heatmap(hm, tau, connectivity=connectivity)
            if boxes:
                best_iou[i, t] = max(iou(box, gt) for box in boxes)
    levels = np.asarray(cfg.iou_levels, dtype=np.float64)
    # box_acc[t, d]: fraction of images reaching IoU >= levels[d] at taus[t]
    box_acc = (best_iou[:, :, None] >= levels[None, None, :]).mean(axis=0)
    per_level = {
        round(float(d), 2): 100.0 * float(box_acc[:, j].max())
        for j, d in enumerate(levels)
    }
    return WsolScores(
        per_level=per_level,
        mean=float(np.mean(list(per_level.values()))),
        box_acc=box_acc,
        thresholds=taus,
        iou_levels=tuple(cfg.iou_levels),
    )


def read_gt_csv(path) -> dict[str, BBox]:
    """Ground truth rows: image_id, x_min, y_min, x_max, y_max."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["image_id"]] = BBox(
                x_min=int(row["x_min"]),
                y_min=int(row["y_min"]),
                x_max=int(row["x_max"]),
                y_max=int(row["y_max"]),
            )
    return out


def write_results_csv(results: list[tuple[str, WsolScores]], path,
                      baseline: str | None = None) -> None:
    """One row per method with per-level scores and deltas vs a baseline row."""
    if not results:
        raise LengthMismatchError("no results to write")
    names = [name for name, _ in results]
    base_name = baseline if baseline is not None else names[0]
    if base_name not in names:
        raise LengthMismatchError(f"baseline {base_name!r} not among methods {names}")
    base = dict(results)[base_name]
    levels = results[0][1].iou_levels
    header = ["method", "max_box_acc_v2"]
    header += [f"iou_at_{int(round(d * 100))}" for d in levels]
    header += ["delta_max_box_acc_v2"]
    header += [f"delta_iou_at_{int(round(d * 100))}" for d in levels]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name, scores in results:
            row = [name, f"{scores.mean:.10g}"]
            row += [f"{scores.per_level[round(float(d), 2)]:.10g}" for d in levels]
            row += [f"{scores.mean - base.mean:.10g}"]
            row += [
                f"{scores.per_level[round(float(d), 2)] - base.per_level[round(float(d), 2)]:.10g}"
                for d in levels
            ]
            writer.writerow(row)
