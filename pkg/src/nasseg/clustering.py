"""Clustering kernels: seeded k-means, Ward agglomeration, knn labeling.

k-means is Lloyd's algorithm with k-means++ seeding; everything is
deterministic given the seed. Ward linkage runs on the nearest-neighbor-chain
scheme with Lance-Williams updates on squared distances, then merges are
sorted by height and relabeled, so heights are non-decreasing and cutting the
tree at increasing K refines the same partition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadKError,
    DimensionMismatchError,
    NonFiniteInputError,
    TooFewRowsError,
)


@dataclass
class KMeansModel:
    centroids: np.ndarray  # [k, cols]
    labels: np.ndarray  # [rows] int32
    inertia: float
    iterations_run: int
    seed: int


@dataclass
class Dendrogram:
    """Agglomerative merge history.

    ``merges`` is an [n-1, 4] float array with rows (node_a, node_b, height,
    new_size). Leaves are nodes 0..n-1; the i-th row creates node n+i.
    """

    merges: np.ndarray
    n_leaves: int

    def __post_init__(self):
        heights = self.merges[:, 2]
        if np.any(np.diff(heights) < 0):
            raise ValueError("merge heights must be non-decreasing")


@dataclass
class KnnModel:
    train_points: np.ndarray  # [m, cols]
    train_labels: np.ndarray  # [m] int
    k: int = 5

    def __post_init__(self):
        self.train_points = np.asarray(self.train_points)
        self.train_labels = np.asarray(self.train_labels)
        m = self.train_points.shape[0]
        if not 1 <= self.k <= m:
            raise BadKError(f"k={self.k} must be in [1, {m}]")
        if self.train_labels.shape[0] != m:
            raise DimensionMismatchError("train labels/points row counts differ")


def _as_matrix(m) -> np.ndarray:
    data = np.asarray(getattr(m, "data", m), dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteInputError("matrix contains non-finite values")
    return data


def _sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (
        np.einsum("ij,ij->i", x, x)[:, None]
        + np.einsum("ij,ij->i", centers, centers)[None, :]
        - 2.0 * x @ centers.T
    )
    return np.maximum(d, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_distances(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[i] = x[idx]
        closest = np.minimum(closest, _sq_distances(x, centers[i : i + 1])[:, 0])
    return centers


def kmeans_fit(m, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-4) -> KMeansModel:
    """Lloyd's k-means with k-means++ seeding.

    Stops when the max centroid movement (L2) drops below ``tol`` or after
    ``max_iter`` iterations. Empty clusters are reseeded to the point
    currently farthest from its assigned centroid.
    """
    x = _as_matrix(m)
    n = x.shape[0]
    if n < k:
        raise TooFewRowsError(f"{n} rows < k={k}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng)

    prev_inertia = np.inf
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d = _sq_distances(x, centers)
        labels = np.argmin(d, axis=1)
        assigned = d[np.arange(n), labels]
        inertia = float(assigned.sum())
        # Lloyd steps never increase inertia; tolerate fp wobble only.
        assert inertia <= prev_inertia * (1 + 1e-9) + 1e-9, "inertia increased"
        prev_inertia = inertia

        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0
        counts = onehot.sum(axis=0)
        sums = onehot.T @ x
        new_centers = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
        if np.any(counts == 0):
            takeable = assigned.copy()
            for j in np.flatnonzero(counts == 0):
                far = int(np.argmax(takeable))
                new_centers[j] = x[far]
                takeable[far] = -np.inf

        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if movement < tol:
            break

    d = _sq_distances(x, centers)
    labels = np.argmin(d, axis=1).astype(np.int32)
    inertia = float(d[np.arange(n), labels].sum())
    return KMeansModel(
        centroids=centers,
        labels=labels,
        inertia=inertia,
        iterations_run=iterations,
        seed=seed,
    )


def ward_fit(m) -> Dendrogram:
    """Agglomerate rows under Ward's minimum-variance criterion.

    Heights are sqrt(2 * increase-in-SSE), i.e. plain Euclidean distance for
    singleton merges.
    """
    x = _as_matrix(m)
    n = x.shape[0]
    if n < 2:
        raise TooFewRowsError(f"need >= 2 rows, got {n}")

    # The full distance matrix is O(n^2) memory; past a few thousand rows we
    # trade double precision for a tolerable footprint.
    dtype = np.float64 if n <= 4096 else np.float32
    d2 = _pairwise_sq(x.astype(dtype, copy=False))
    np.fill_diagonal(d2, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)

    raw = np.empty((n - 1, 3))
    chain: list[int] = []
    for step in range(n - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            tail = chain[-1]
            row = np.where(active, d2[tail], np.inf)
            row[tail] = np.inf
            best = int(np.argmin(row))
            if len(chain) > 1:
                # prefer the previous chain element on ties so reciprocal
                # nearest neighbors are detected
                prev = chain[-2]
                if row[prev] <= row[best]:
                    best = prev
            if len(chain) > 1 and best == chain[-2]:
                break
            chain.append(best)
        y = chain.pop()
        xx = chain.pop()
        a, b = (xx, y) if xx < y else (y, xx)
        raw[step] = (a, b, d2[a, b])

        # Lance-Williams update into slot a; slot b dies
        na, nb, nk = size[a], size[b], size
        dab = d2[a, b]
        new_row = ((na + nk) * d2[a] + (nb + nk) * d2[b] - nk * dab) / (na + nb + nk)
        d2[a, :] = new_row
        d2[:, a] = new_row
        d2[a, a] = np.inf
        size[a] = na + nb
        active[b] = False

    order = np.argsort(raw[:, 2], kind="stable")
    raw = raw[order]

    # Relabel slot representatives as dendrogram node ids in height order.
    parent = np.arange(n)
    node_of_root = np.arange(n)

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    merges = np.empty((n - 1, 4))
    sizes = np.ones(n)
    for i in range(n - 1):
        ra, rb = find(int(raw[i, 0])), find(int(raw[i, 1]))
        ida, idb = int(node_of_root[ra]), int(node_of_root[rb])
        if ida > idb:
            ida, idb = idb, ida
        new_size = sizes[ra] + sizes[rb]
        parent[ra] = rb
        node_of_root[rb] = n + i
        sizes[rb] = new_size
        merges[i] = (ida, idb, np.sqrt(raw[i, 2]), new_size)
    return Dendrogram(merges=merges, n_leaves=n)


def _pairwise_sq(x: np.ndarray, block: int = 2048) -> np.ndarray:
    n = x.shape[0]
    sq = np.einsum("ij,ij->i", x, x)
    out = np.empty((n, n), dtype=x.dtype)
    for start in range(0, n, block):
        stop = min(start + block, n)
        g = x[start:stop] @ x.T
        out[start:stop] = sq[start:stop, None] + sq[None, :] - 2.0 * g
    np.maximum(out, 0.0, out=out)
    return out


def cut_dendrogram(d: Dendrogram, k: int) -> np.ndarray:
    """Partition leaves into k clusters by dropping the k-1 highest merges.

    Labels are numbered by order of first occurrence over the leaves.
    """
    n = d.n_leaves
    if not 1 <= k <= n:
        raise BadKError(f"k={k} must be in [1, {n}]")
    n_nodes = n + (n - 1)
    parent = np.full(n_nodes, -1, dtype=np.int64)
    for i in range(n - k):
        a, b = int(d.merges[i, 0]), int(d.merges[i, 1])
        parent[a] = parent[b] = n + i

    labels = np.empty(n, dtype=np.int32)
    root_label: dict[int, int] = {}
    for leaf in range(n):
        node = leaf
        while parent[node] != -1:
            node = parent[node]
        labels[leaf] = root_label.setdefault(node, len(root_label))
    return labels


def knn_fit(train_points, train_labels, k: int = 5) -> KnnModel:
    return KnnModel(train_points=train_points, train_labels=train_labels, k=k)


def knn_predict(model: KnnModel, queries, block: int = 512) -> np.ndarray:
    """Majority vote among the k nearest training points (L2).

    Distance ties at the k-th neighbor admit the smallest training index;
    vote ties pick the smallest label.
    """
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(model.train_points, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != t.shape[1]:
        raise DimensionMismatchError(
            f"queries have {q.shape[1] if q.ndim == 2 else '?'} cols, train has {t.shape[1]}"
        )
    labels = np.asarray(model.train_labels, dtype=np.int64)
    n_labels = int(labels.max()) + 1 if labels.size else 1
    onehot = np.zeros((t.shape[0], n_labels))
    onehot[np.arange(t.shape[0]), labels] = 1.0

    k = model.k
    out = np.empty(q.shape[0], dtype=np.int32)
    for start in range(0, q.shape[0], block):
        stop = min(start + block, q.shape[0])
        d = _sq_distances(q[start:stop], t)
        kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
        strict = d < kth
        n_strict = strict.sum(axis=1, keepdims=True)
        boundary = d == kth
        take = np.cumsum(boundary, axis=1) <= (k - n_strict)
        chosen = strict | (boundary & take)
        votes = chosen.astype(np.float64) @ onehot
        out[start:stop] = np.argmax(votes, axis=1)
    return out
