"""Diversity selection: PCA, k-means, nearest-to-centroid picks."""

from __future__ import annotations

import math

import numpy as np
import pytest

from guicurate.diversity import (
    EmbeddingMatrix,
    fit_pca_project,
    nearest_to_centroids,
    run_kmeans,
    select_diverse,
)
from guicurate.errors import InputError
from guicurate.geometry import BBox, ImageDims
from guicurate.records import GroundingRecord


def make_matrix(n, d, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(
        ids=[f"e-{i:04d}" for i in range(n)],
        rows=rng.standard_normal((n, d)),
    )


def make_records(ids):
    return [
        GroundingRecord(
            id=rec_id, image_ref=f"{rec_id}.png", dims=ImageDims(500, 500),
            instruction=f"tap {rec_id}", gt_box=BBox(5, 5, 50, 50),
            source="AriaUI-Desktop", platform="desktop", elem_type="icon",
        )
        for rec_id in ids
    ]


class TestPCA:
    def test_components_orthonormal(self):
        matrix = make_matrix(120, 24)
        projection, _ = fit_pca_project(matrix, target_dim=10)
        gram = projection.components @ projection.components.T
        assert np.allclose(gram, np.eye(10), atol=1e-8)

    def test_variances_non_increasing(self):
        matrix = make_matrix(200, 32)
        projection, _ = fit_pca_project(matrix, target_dim=32)
        variances = projection.explained_variances
        assert all(variances[i] >= variances[i + 1] - 1e-12
                   for i in range(len(variances) - 1))

    def test_output_dim_capped_by_rows(self):
        matrix = make_matrix(5, 64)
        projection, projected = fit_pca_project(matrix, target_dim=768)
        assert projection.components.shape == (4, 64)
        assert projected.shape == (5, 4)

    def test_output_dim_capped_by_input_dim(self):
        matrix = make_matrix(100, 8)
        _, projected = fit_pca_project(matrix, target_dim=768)
        assert projected.shape == (100, 8)

    def test_sign_convention_fixed(self):
        matrix = make_matrix(60, 12, seed=3)
        projection, _ = fit_pca_project(matrix, target_dim=6)
        for row in projection.components:
            assert row[int(np.argmax(np.abs(row)))] > 0

    def test_projection_matches_transform(self):
        matrix = make_matrix(40, 10)
        projection, projected = fit_pca_project(matrix, target_dim=5)
        again = projection.transform(matrix.rows)
        assert np.allclose(projected, again, atol=1e-10)

    def test_variance_recovered_on_known_data(self):
        # two dominant axes with known variances
        rng = np.random.default_rng(8)
        n = 4000
        base = np.zeros((n, 6))
        base[:, 0] = rng.standard_normal(n) * 5.0
        base[:, 1] = rng.standard_normal(n) * 2.0
        base[:, 2:] = rng.standard_normal((n, 4)) * 0.05
        matrix = EmbeddingMatrix(ids=[str(i) for i in range(n)], rows=base)
        projection, _ = fit_pca_project(matrix, target_dim=2)
        assert projection.explained_variances[0] == pytest.approx(25.0, rel=0.1)
        assert projection.explained_variances[1] == pytest.approx(4.0, rel=0.1)

    def test_single_row_rejected(self):
        with pytest.raises(InputError):
            fit_pca_project(make_matrix(1, 4))

    def test_non_finite_rejected(self):
        rows = np.ones((4, 3))
        rows[2, 1] = np.nan
        with pytest.raises(InputError):
            EmbeddingMatrix(ids=["a", "b", "c", "d"], rows=rows)


class TestKMeans:
    def test_every_cluster_non_empty(self):
        matrix = make_matrix(300, 8, seed=5)
        clustering = run_kmeans(matrix.rows, 30, seed=1, ids=matrix.ids)
        sizes = [0] * 30
        for cluster in clustering.assignment.values():
            sizes[cluster] += 1
        assert all(size > 0 for size in sizes)
        assert sum(sizes) == 300

    def test_inertia_history_non_increasing(self):
        matrix = make_matrix(500, 12, seed=6)
        clustering = run_kmeans(matrix.rows, 40, seed=2, ids=matrix.ids)
        history = clustering.inertia_history
        assert len(history) >= 2
        for earlier, later in zip(history, history[1:]):
            assert later <= earlier + 1e-7

    def test_deterministic(self):
        matrix = make_matrix(200, 6, seed=7)
        a = run_kmeans(matrix.rows, 20, seed=3, ids=matrix.ids)
        b = run_kmeans(matrix.rows, 20, seed=3, ids=matrix.ids)
        assert a.assignment == b.assignment
        assert np.array_equal(a.centroids, b.centroids)

    def test_k_equals_n_puts_each_point_alone(self):
        rows = np.arange(12, dtype=float).reshape(6, 2) * 3.0
        clustering = run_kmeans(rows, 6, seed=0)
        sizes = [0] * 6
        for cluster in clustering.assignment.values():
            sizes[cluster] += 1
        assert sizes == [1] * 6
        assert clustering.inertia == pytest.approx(0.0, abs=1e-12)

    def test_identical_points_fill_all_clusters(self):
        rows = np.ones((10, 4))
        clustering = run_kmeans(rows, 4, seed=1)
        occupied = set(clustering.assignment.values())
        assert occupied == {0, 1, 2, 3}
        assert clustering.inertia == pytest.approx(0.0, abs=1e-12)

    def test_well_separated_blobs_recovered(self):
        rng = np.random.default_rng(9)
        centers = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
        rows = np.vstack([
            centers[i] + rng.standard_normal((40, 2)) * 0.5 for i in range(3)
        ])
        ids = [f"p-{i:03d}" for i in range(120)]
        clustering = run_kmeans(rows, 3, seed=4, ids=ids)
        # points from one blob share a label
        labels = [clustering.assignment[f"p-{i:03d}"] for i in range(120)]
        for blob in range(3):
            blob_labels = set(labels[blob * 40:(blob + 1) * 40])
            assert len(blob_labels) == 1

    def test_k_bounds(self):
        rows = np.ones((5, 2))
        with pytest.raises(InputError):
            run_kmeans(rows, 0, seed=0)
        with pytest.raises(InputError):
            run_kmeans(rows, 6, seed=0)


class TestNearestSelection:
    def test_matches_exhaustive_scan(self):
        matrix = make_matrix(400, 10, seed=11)
        _, projected = fit_pca_project(matrix, target_dim=8)
        clustering = run_kmeans(projected, 40, seed=5, ids=matrix.ids)
        chosen = nearest_to_centroids(clustering, matrix.ids, projected)
        # oracle: brute-force nearest member per cluster with id tie-break
        by_cluster: dict[int, list[int]] = {}
        for i, rec_id in enumerate(matrix.ids):
            by_cluster.setdefault(clustering.assignment[rec_id], []).append(i)
        for cluster, members in by_cluster.items():
            best = None
            best_key = None
            for i in members:
                dist = float(np.sum(
                    (projected[i] - clustering.centroids[cluster]) ** 2
                ))
                key = (dist, matrix.ids[i])
                if best_key is None or key < best_key:
                    best_key = key
                    best = matrix.ids[i]
            assert chosen[cluster] == best

    def test_tie_breaks_to_smallest_id(self):
        rows = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
        ids = ["d", "c", "b", "a"]
        # sorted by id: a(1,-1), b(1,1), c(2,0), d(0,0)
        order = sorted(range(4), key=lambda i: ids[i])
        sorted_ids = [ids[i] for i in order]
        sorted_rows = rows[order]
        clustering = run_kmeans(sorted_rows, 1, seed=0, ids=sorted_ids)
        # centroid is (1, 0); a and b tie at distance 1
        chosen = nearest_to_centroids(clustering, sorted_ids, sorted_rows)
        assert chosen == ["a"]


class TestSelectDiverse:
    def test_count_is_ceil(self):
        for n, expected in ((37, 4), (40, 4), (100, 10), (1, 1), (9, 1), (11, 2)):
            ids = [f"s-{i:04d}" for i in range(n)]
            records = make_records(ids)
            matrix = make_matrix(n, 12, seed=n)
            matrix = EmbeddingMatrix(ids=ids, rows=matrix.rows)
            selected = select_diverse(records, matrix, ratio=0.10, seed=1)
            assert len(selected) == expected, f"n={n}"
            assert math.ceil(0.10 * n) == expected

    def test_selected_are_input_records(self):
        ids = [f"s-{i:03d}" for i in range(50)]
        records = make_records(ids)
        matrix = EmbeddingMatrix(ids=ids, rows=make_matrix(50, 8, seed=2).rows)
        selected = select_diverse(records, matrix, ratio=0.2, seed=3)
        assert len(selected) == 10
        assert set(rec.id for rec in selected) <= set(ids)
        assert len({rec.id for rec in selected}) == 10

    def test_identical_embeddings_pick_smallest_ids(self):
        ids = [f"t-{i:02d}" for i in range(10)]
        records = make_records(ids)
        matrix = EmbeddingMatrix(ids=ids, rows=np.ones((10, 5)))
        selected = select_diverse(records, matrix, ratio=0.3, seed=4)
        assert sorted(rec.id for rec in selected) == ["t-00", "t-01", "t-02"]

    def test_deterministic(self):
        ids = [f"u-{i:03d}" for i in range(80)]
        records = make_records(ids)
        matrix = EmbeddingMatrix(ids=ids, rows=make_matrix(80, 10, seed=5).rows)
        first = [rec.id for rec in select_diverse(records, matrix, seed=6)]
        second = [rec.id for rec in select_diverse(records, matrix, seed=6)]
        assert first == second

    def test_missing_embedding_rejected(self):
        ids = [f"v-{i}" for i in range(5)]
        records = make_records(ids)
        matrix = EmbeddingMatrix(ids=ids[:4], rows=np.ones((4, 3)))
        with pytest.raises(InputError, match="missing"):
            select_diverse(records, matrix)

    def test_bad_ratio(self):
        ids = ["w-0"]
        records = make_records(ids)
        matrix = EmbeddingMatrix(ids=ids, rows=np.ones((1, 3)))
        with pytest.raises(InputError):
            select_diverse(records, matrix, ratio=0.0)

    def test_cosine_metric_runs(self):
        ids = [f"x-{i:03d}" for i in range(40)]
        records = make_records(ids)
        matrix = EmbeddingMatrix(ids=ids, rows=make_matrix(40, 8, seed=9).rows)
        selected = select_diverse(records, matrix, ratio=0.1, seed=2,
                                  metric="cosine")
        assert len(selected) == 4
