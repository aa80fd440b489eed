"""Diversity selection: PCA projection, k-means, nearest-to-centroid picks.

The selector keeps roughly one record in ten: embeddings are projected with
PCA, clustered with k-means (k = ceil(ratio * n)), and the record nearest
each centroid survives. Everything is plain numpy and fully deterministic
given the seed; ties always resolve toward the smallest record id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .records import GroundingRecord


@dataclass
class EmbeddingMatrix:
    """Embedding rows aligned with record ids."""

    ids: list[str]
    rows: np.ndarray

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise InputError(f"embedding matrix must be 2-d, got {self.rows.ndim}-d")
        if len(self.ids) != self.rows.shape[0]:
            raise InputError(
                f"{len(self.ids)} ids but {self.rows.shape[0]} embedding rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise InputError("duplicate ids in embedding matrix")
        if not np.isfinite(self.rows).all():
            raise InputError("embeddings contain non-finite values")

    def reindex(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        """Rows for the given ids, in the given order."""
        position = {rec_id: i for i, rec_id in enumerate(self.ids)}
        missing = [rec_id for rec_id in ids if rec_id not in position]
        if missing:
            raise InputError(f"embeddings missing for ids: {missing[:5]!r}")
        index = [position[rec_id] for rec_id in ids]
        return EmbeddingMatrix(ids=list(ids), rows=self.rows[index])


@dataclass
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray  # (d_out, d_in), rows orthonormal
    explained_variances: np.ndarray

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.components.T


def fit_pca_project(matrix: EmbeddingMatrix,
                    target_dim: int = 768) -> tuple[PCAProjection, np.ndarray]:
    """Fit PCA on the rows and project them.

    The output dimension is min(target_dim, n - 1, d_in); rank-deficient
    input simply yields near-zero trailing variances. Each component's sign
    is fixed so its largest-magnitude entry is positive, which pins the
    projection down deterministically."""
    if target_dim < 1:
        raise InputError(f"target_dim must be >= 1, got {target_dim}")
    rows = matrix.rows
    n, d_in = rows.shape
    if n < 2:
        raise InputError(f"PCA needs at least 2 rows, got {n}")
    mean = rows.mean(axis=0)
    centered = rows - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    d_out = min(target_dim, n - 1, d_in)
    components = vt[:d_out].copy()
    for row in components:
        if row[int(np.argmax(np.abs(row)))] < 0:
            row *= -1.0
    variances = (singular[:d_out] ** 2) / (n - 1)
    projection = PCAProjection(
        mean=mean, components=components, explained_variances=variances
    )
    return projection, centered @ components.T


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray
    assignment: dict[str, int]
    inertia: float
    inertia_history: list[float]


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point (ties to the lowest centroid index) and the
    squared distance to it."""
    c2 = np.einsum("ij,ij->i", centroids, centroids)
    scores = c2[:, None] - 2.0 * (centroids @ points.T)
    labels = np.argmin(scores, axis=0)
    p2 = np.einsum("ij,ij->i", points, points)
    d2 = scores[labels, np.arange(points.shape[0])] + p2
    return labels, np.maximum(d2, 0.0)


def _repair_empty(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray,
                  d2: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its own centroid.

    Donors must keep at least one member. Scanning is in row order, so with
    id-sorted rows all ties fall to the smallest id. The grabbed point's
    distance drops to zero, which keeps the inertia sequence non-increasing."""
    counts = np.bincount(labels, minlength=k)
    for cluster in np.flatnonzero(counts == 0):
        eligible = counts[labels] > 1
        if not eligible.any():
            break
        candidates = np.where(eligible, d2, -1.0)
        grab = int(np.argmax(candidates))
        counts[labels[grab]] -= 1
        labels[grab] = cluster
        counts[cluster] = 1
        centroids[cluster] = points[grab]
        d2[grab] = 0.0
    return labels


def _init_centroids(points: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, the rest sampled with
    probability proportional to squared distance from the chosen set."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.einsum("ij,ij->i", points - centroids[0], points - centroids[0])
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[pick]
        delta = points - centroids[i]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", delta, delta))
    return centroids


def run_kmeans(points: np.ndarray, k: int, seed: int, *,
               ids: Sequence[str] | None = None, tol: float = 1e-6,
               max_iter: int = 300) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    Iterates until the largest centroid shift falls under tol or max_iter
    passes. Empty clusters are repaired each assignment by donating the point
    farthest from its current centroid, so the final clustering never has an
    empty cluster and the recorded inertia history is non-increasing."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InputError(f"points must be 2-d, got {points.ndim}-d")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k must be in [1, {n}], got {k}")
    if ids is None:
        ids = [str(i) for i in range(n)]
    elif len(ids) != n:
        raise InputError(f"{len(ids)} ids but {n} points")
    rng = np.random.default_rng(seed)
    centroids = _init_centroids(points, k, rng)
    history: list[float] = []
    for _ in range(max_iter):
        labels, d2 = _assign(points, centroids)
        labels = _repair_empty(points, labels, centroids, d2, k)
        history.append(float(d2.sum()))
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        new_centroids = sums / counts[:, None]
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    labels, d2 = _assign(points, centroids)
    labels = _repair_empty(points, labels, centroids, d2, k)
    history.append(float(d2.sum()))
    assignment = {ids[i]: int(labels[i]) for i in range(n)}
    return Clustering(
        k=k, centroids=centroids, assignment=assignment,
        inertia=float(d2.sum()), inertia_history=history,
    )


def nearest_to_centroids(clustering: Clustering, ids: Sequence[str],
                         points: np.ndarray) -> list[str]:
    """One id per cluster: the member closest to its centroid, ties to the
    smallest id. ids/points must be sorted by id and match the clustering."""
    labels = np.array([clustering.assignment[rec_id] for rec_id in ids])
    delta = points - clustering.centroids[labels]
    d2 = np.einsum("ij,ij->i", delta, delta)
    chosen: list[str] = []
    for cluster in range(clustering.k):
        members = np.flatnonzero(labels == cluster)
        if members.size == 0:
            raise InputError(f"cluster {cluster} is empty")
        best = members[int(np.argmin(d2[members]))]
        chosen.append(ids[best])
    return chosen


def select_diverse(records: Sequence[GroundingRecord], matrix: EmbeddingMatrix,
                   *, ratio: float = 0.10, seed: int = 0, target_dim: int = 768,
                   metric: str = "euclidean") -> list[GroundingRecord]:
    """Pick ceil(ratio * n) records spread across embedding space.

    Records are id-sorted, projected with PCA, clustered with k-means, and
    each cluster contributes its member nearest the centroid. metric
    'cosine' length-normalizes rows before projection; the default compares
    raw embeddings euclidean-style."""
    if not 0.0 < ratio <= 1.0:
        raise InputError(f"ratio must be in (0, 1], got {ratio}")
    if metric not in ("euclidean", "cosine"):
        raise InputError(f"unknown metric {metric!r}")
    if not records:
        raise InputError("no records to select from")
    by_id = {rec.id: rec for rec in records}
    if len(by_id) != len(records):
        raise InputError("duplicate record ids")
    ordered_ids = sorted(by_id)
    aligned = matrix.reindex(ordered_ids)
    rows = aligned.rows
    if metric == "cosine":
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = np.where(norms > 0.0, rows / np.maximum(norms, 1e-12), rows)
        aligned = EmbeddingMatrix(ids=ordered_ids, rows=rows)
    n = len(ordered_ids)
    k = math.ceil(ratio * n)
    if n == 1:
        return [by_id[ordered_ids[0]]]
    _, projected = fit_pca_project(aligned, target_dim=target_dim)
    clustering = run_kmeans(projected, k, seed, ids=ordered_ids)
    kept = nearest_to_centroids(clustering, ordered_ids, projected)
    return [by_id[rec_id] for rec_id in kept]
