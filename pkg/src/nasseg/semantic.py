"""Class-wise activation clustering and the cluster-saliency table.

Feature rows pooled over a class's images are Ward-clustered and cut into a
small number of class-level clusters; a knn model extends the cut labels to
arbitrary rows. Per image, pixels get cluster labels, each cluster's
connected components become superpixels, and a cluster's image score is the
mean of its superpixels' mean saliencies. The table aggregates those scores
over images split by prediction correctness.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .clustering import KnnModel, cut_dendrogram, knn_fit, knn_predict, ward_fit
from .errors import (
    BadKError,
    DimensionMismatchError,
    EmptySplitWarning,
    LengthMismatchError,
    TooFewRowsError,
)
from .saliency import component_means
from .superpixels import connected_components


@dataclass
class ClassClusterModel:
    knn: KnnModel
    merges: np.ndarray  # dendrogram merge table of the subsampled pool
    cut_labels: np.ndarray  # cluster ids of the knn training rows
    n_clusters: int
    seed: int
    class_id: int | None = None
    sample_indices: np.ndarray | None = None  # rows kept out of the pooled matrix


@dataclass
class SplitCells:
    image_count: int
    most_salient_cluster: int | None
    target_cluster_mean: float
    other_clusters_mean: float
    per_cluster_means: np.ndarray  # [n_clusters], nan where a cluster never appears


@dataclass
class ClusterSaliencyTable:
    target_cluster: int
    splits: dict  # "correct" / "wrong" -> SplitCells


def _matrix_data(fm) -> np.ndarray:
    return np.asarray(getattr(fm, "data", fm), dtype=np.float32)


def fit_class_cluster_model(feature_matrices, n_clusters: int = 10,
                            sample_cap: int = 100_000, seed: int = 0,
                            class_id: int | None = None,
                            knn_k: int = 5) -> ClassClusterModel:
    """Pool rows across images, subsample, Ward-cluster, fit the knn extension."""
    if not feature_matrices:
        raise TooFewRowsError("no feature matrices given")
    mats = [_matrix_data(fm) for fm in feature_matrices]
    cols = mats[0].shape[1]
    for m in mats:
        if m.shape[1] != cols:
            raise DimensionMismatchError(
                f"feature matrices disagree on columns: {m.shape[1]} vs {cols}"
            )
    pool = np.concatenate(mats, axis=0)
    if n_clusters < 2:
        raise BadKError(f"n_clusters must be >= 2, got {n_clusters}")
    if len(pool) < n_clusters:
        raise TooFewRowsError(f"{len(pool)} pooled rows for {n_clusters} clusters")
    if len(pool) > sample_cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(pool), size=sample_cap, replace=False))
    else:
        idx = np.arange(len(pool))
    sample = pool[idx]
    dendrogram = ward_fit(sample)
    labels = cut_dendrogram(dendrogram, n_clusters)
    knn = knn_fit(sample, labels, k=min(knn_k, len(sample)))
    return ClassClusterModel(
        knn=knn,
        merges=dendrogram.merges,
        cut_labels=labels,
        n_clusters=n_clusters,
        seed=seed,
        class_id=class_id,
        sample_indices=idx,
    )


def image_cluster_scores(fm, saliency_map, model: ClassClusterModel,
                         connectivity: int = 4,
                         size_weighted: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One image's per-cluster saliency scores.

    Returns (scores, superpixel_means): scores is [n_clusters] with nan for
    clusters absent from the image; superpixel_means holds every superpixel's
    (mean saliency, parent cluster) for pooled aggregation.
    """
    data = _matrix_data(fm)
    h, w = fm.output_h, fm.output_w
    labels = knn_predict(model.knn, data).reshape(h, w).astype(np.int32)
    partition = connected_components(labels, connectivity=connectivity)
    means = component_means(saliency_map, partition)
    scores = np.full(model.n_clusters, np.nan, dtype=np.float64)
    for cluster in np.unique(partition.parent_cluster):
        sel = partition.parent_cluster == cluster
        if size_weighted:
            weights = partition.component_sizes[sel]
            scores[cluster] = float(np.average(means[sel], weights=weights))
        else:
            scores[cluster] = float(means[sel].mean())
    return scores, np.stack([means, partition.parent_cluster.astype(np.float64)], axis=1)


def _split_cells(per_image_scores: list, pooled: list, target_cluster: int,
                 n_clusters: int, pooled_other: bool) -> SplitCells:
    if not per_image_scores:
        warnings.warn("empty prediction split; cells set to nan", EmptySplitWarning)
        return SplitCells(
            image_count=0,
            most_salient_cluster=None,
            target_cluster_mean=float("nan"),
            other_clusters_mean=float("nan"),
            per_cluster_means=np.full(n_clusters, np.nan),
        )
    stacked = np.stack(per_image_scores)  # [images, n_clusters], nan = absent
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-nan columns stay nan
        per_cluster = np.nanmean(stacked, axis=0)
    present = ~np.isnan(per_cluster)
    most = int(np.argmax(np.where(present, per_cluster, -np.inf))) if present.any() else None
    if pooled_other:
        rows = np.concatenate(pooled, axis=0)  # [superpixels, (mean, cluster)]
        mask = rows[:, 1] != target_cluster
        other = float(rows[mask, 0].mean()) if mask.any() else float("nan")
    else:
        others = np.delete(per_cluster, target_cluster)
        other = float(np.nanmean(others)) if (~np.isnan(others)).any() else float("nan")
    return SplitCells(
        image_count=len(per_image_scores),
        most_salient_cluster=most,
        target_cluster_mean=float(per_cluster[target_cluster]),
        other_clusters_mean=other,
        per_cluster_means=per_cluster,
    )


def cluster_saliency_table(feature_matrices, saliency_maps, model: ClassClusterModel,
                           predictions, true_class: int, target_cluster: int,
                           connectivity: int = 4, size_weighted: bool = False,
                           pooled_other: bool = False) -> ClusterSaliencyTable:
    """Aggregate per-cluster saliency over images split by prediction correctness."""
    n = len(feature_matrices)
    if not (len(saliency_maps) == len(predictions) == n):
        raise LengthMismatchError(
            f"{n} feature matrices, {len(saliency_maps)} saliency maps, "
            f"{len(predictions)} predictions"
        )
    if not 0 <= target_cluster < model.n_clusters:
        raise BadKError(f"target cluster {target_cluster} outside [0, {model.n_clusters})")
    buckets = {"correct": ([], []), "wrong": ([], [])}
    for fm, sal, pred in zip(feature_matrices, saliency_maps, predictions):
        scores, pooled = image_cluster_scores(
            fm, sal, model, connectivity=connectivity, size_weighted=size_weighted
        )
        key = "correct" if int(pred) == int(true_class) else "wrong"
        buckets[key][0].append(scores)
        buckets[key][1].append(pooled)
    splits = {
        key: _split_cells(scores, pooled, target_cluster, model.n_clusters, pooled_other)
        for key, (scores, pooled) in buckets.items()
    }
    return ClusterSaliencyTable(target_cluster=target_cluster, splits=splits)


def write_table_csv(table: ClusterSaliencyTable, path, method: str = "nas") -> None:
    """Rows: method, split, most_salient, target_mean, other_mean."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "split", "most_salient", "target_mean", "other_mean"])
        for split in ("correct", "wrong"):
            cells = table.splits[split]
            writer.writerow(
                [
                    method,
                    split,
                    "" if cells.most_salient_cluster is None else cells.most_salient_cluster,
                    f"{cells.target_cluster_mean:.10g}",
                    f"{cells.other_clusters_mean:.10g}",
                ]
            )
