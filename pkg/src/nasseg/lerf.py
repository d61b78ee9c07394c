"""Least-relevant-first deletion curves, their scaled AUC, and greedy AUC
maximization.

A curve starts from the unmasked standardized image (score s_0) and zeroes
superpixels cumulatively — ascending mean saliency, ties by component id —
recording the oracle's pre-softmax score for the target class after each
deletion. Scores are rescaled so curves start at 1 and end at 0, then
integrated by the trapezoid rule over uniform steps x_i = i/n.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatchError, OracleFailure, ShapeMismatchError, TooShortError
from .saliency import component_means
from .superpixels import SuperpixelPartition


@dataclass
class MaskState:
    """Working standardized image with a record of deleted components."""

    image: np.ndarray  # [C, H, W]; deleted pixels are exactly 0 in all channels
    deleted: set = field(default_factory=set)

    def delete(self, label_map: np.ndarray, component: int) -> None:
        self.image[:, label_map == component] = 0.0
        self.deleted.add(int(component))


@dataclass
class LerfCurve:
    scores: np.ndarray  # [n+1] raw pre-softmax target scores, s_0 unmasked
    order: np.ndarray  # [n] deletion order (component ids)
    scaled: np.ndarray  # [n+1], (s_i - s_n) / (s_0 - s_n)
    auc: float
    pixel_fractions: np.ndarray | None = None  # [n+1] cumulative pixel mass deleted
    oracle_queries: int | None = None  # images scored to build this curve

    def __post_init__(self):
        if len(self.scores) != len(self.order) + 1:
            raise LengthMismatchError(
                f"{len(self.scores)} scores for {len(self.order)} deletions"
            )

    @property
    def leaves_unit_interval(self) -> bool:
        return bool(self.scaled.min() < 0.0 or self.scaled.max() > 1.0)

    def auc_over_pixels(self) -> float:
        """Trapezoid AUC with the x-axis as fraction of pixels deleted."""
        if self.pixel_fractions is None:
            raise ValueError("curve was built without pixel fractions")
        return float(np.trapezoid(self.scaled, self.pixel_fractions))


def scale_and_auc(scores) -> tuple[np.ndarray, float]:
    """Rescale a deletion-score sequence to [1 ... 0] and integrate it.

    Degenerate sequences (s_0 == s_n) scale to [1, 0, ..., 0] by convention.
    """
    raw = np.asarray(scores, dtype=np.float64)
    if raw.ndim != 1 or len(raw) < 2:
        raise TooShortError(f"need at least 2 scores, got shape {raw.shape}")
    span = raw[0] - raw[-1]
    if span == 0.0:
        scaled = np.zeros_like(raw)
        scaled[0] = 1.0
    else:
        scaled = (raw - raw[-1]) / span
    n = len(raw) - 1
    auc = float(np.trapezoid(scaled, dx=1.0 / n))
    return scaled, auc


def _target_scores(oracle, images: np.ndarray, target: int, batch: int, step0: int) -> np.ndarray:
    """Score a stack of images, chunked; annotate failures with the step index."""
    out = np.empty(len(images), dtype=np.float64)
    for start in range(0, len(images), batch):
        chunk = images[start : start + batch]
        try:
            logits = oracle.logits(chunk)
        except OracleFailure as exc:
            if exc.step is None:
                exc.step = step0 + start
            raise
        out[start : start + len(chunk)] = logits[:, target]
    return out


def _check_inputs(img, partition: SuperpixelPartition, oracle, target: int):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3:
        raise ShapeMismatchError(f"expected standardized [C, H, W], got {img.shape}")
    if img.shape[1:] != partition.label_map.shape:
        raise ShapeMismatchError(
            f"image {img.shape[1:]} vs partition {partition.label_map.shape}"
        )
    if not 0 <= int(target) < oracle.meta.num_classes:
        raise ShapeMismatchError(
            f"target {target} outside [0, {oracle.meta.num_classes})"
        )
    return img


def _cumulative_pixel_fractions(order, partition: SuperpixelPartition) -> np.ndarray:
    sizes = partition.component_sizes[np.asarray(order)]
    total = partition.label_map.size
    return np.concatenate([[0.0], np.cumsum(sizes) / total])


def lerf_curve(img, partition: SuperpixelPartition, saliency_map, oracle, target: int,
               batch: int = 64) -> LerfCurve:
    """Deletion curve in ascending order of per-component mean saliency."""
    img = _check_inputs(img, partition, oracle, target)
    means = component_means(saliency_map, partition)
    order = np.argsort(means, kind="stable")  # ties fall back to component id
    n = partition.component_count

    images = np.empty((n + 1,) + img.shape, dtype=np.float32)
    images[0] = img
    state = MaskState(img.copy())
    for i, comp in enumerate(order):
        state.delete(partition.label_map, comp)
        images[i + 1] = state.image
    raw = _target_scores(oracle, images, int(target), batch, step0=0)
    scaled, auc = scale_and_auc(raw)
    return LerfCurve(
        scores=raw,
        order=order.astype(np.int64),
        scaled=scaled,
        auc=auc,
        pixel_fractions=_cumulative_pixel_fractions(order, partition),
        oracle_queries=n + 1,
    )


def greedy_auc_max(img, partition: SuperpixelPartition, oracle, target: int,
                   batch: int = 64) -> tuple[np.ndarray, LerfCurve]:
    """Deletion order chosen step-by-step to maximize the post-deletion score.

    Every remaining component is tentatively zeroed and scored each step
    (n(n+1)/2 + 1 oracle image-queries in total, batched); the component whose
    removal leaves the highest target score is deleted, ties by component id.
    """
    img = _check_inputs(img, partition, oracle, target)
    n = partition.component_count
    remaining = list(range(n))
    state = MaskState(img.copy())
    raw = [float(_target_scores(oracle, img[None], int(target), batch, step0=0)[0])]
    order = []
    queries = 1
    step = 0
    while remaining:
        step += 1
        cands = np.empty((len(remaining),) + img.shape, dtype=np.float32)
        for j, comp in enumerate(remaining):
            cands[j] = state.image
            cands[j][:, partition.label_map == comp] = 0.0
        scores = _target_scores(oracle, cands, int(target), batch, step0=step)
        queries += len(remaining)
        best = int(np.argmax(scores))  # first max → smallest component id
        comp = remaining.pop(best)
        state.delete(partition.label_map, comp)
        order.append(comp)
        raw.append(float(scores[best]))
    order = np.asarray(order, dtype=np.int64)
    scaled, auc = scale_and_auc(raw)
    curve = LerfCurve(
        scores=np.asarray(raw, dtype=np.float64),
        order=order,
        scaled=scaled,
        auc=auc,
        pixel_fractions=_cumulative_pixel_fractions(order, partition),
        oracle_queries=queries,
    )
    return order, curve


def write_curve_csv(curve: LerfCurve, path) -> None:
    """One row per deletion step: step, fraction, raw_score, scaled_score."""
    n = len(curve.order)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "fraction", "raw_score", "scaled_score"])
        for i in range(n + 1):
            writer.writerow(
                [i, f"{i / n:.10g}" if n else "0",
                 f"{curve.scores[i]:.10g}", f"{curve.scaled[i]:.10g}"]
            )


def write_summary_csv(rows: list[dict], path) -> None:
    """Per-image AUC summary: image_id, components, auc, leaves_unit_interval."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "components", "auc", "leaves_unit_interval"])
        for row in rows:
            writer.writerow(
                [row["image_id"], row["components"], f"{row['auc']:.10g}",
                 int(row["leaves_unit_interval"])]
            )
