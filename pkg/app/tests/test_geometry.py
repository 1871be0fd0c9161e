"""Neighbor search, normalization and chamfer distance."""

import numpy as np
import pytest

from models.geometry import PointCloud
from services.errors import InvalidArgumentError
from services.geometry import (
    adaptive_k,
    chamfer_distance,
    chamfer_with_grad,
    knn_l1,
    knn_l1_all,
    normalize_neighborhood,
    radius_neighbors_l1,
    subsample_cloud,
)


def brute_force_knn(points: np.ndarray, q: np.ndarray, k: int) -> list[int]:
    dist = [abs(p[0] - q[0]) + abs(p[1] - q[1]) + abs(p[2] - q[2]) for p in points.tolist()]
    return sorted(range(len(dist)), key=lambda i: (dist[i], i))[:k]


class TestKnn:
    def test_ties_go_to_lower_index(self):
        cloud = PointCloud.of([[1, 0, 0], [0, 1, 0], [0, 0, 0], [0, 0, 1]])
        assert knn_l1(cloud, [0, 0, 0], 4).tolist() == [2, 0, 1, 3]

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(2, 513))
            # coarse lattice so equal distances are common
            points = rng.integers(-4, 5, size=(n, 3)) / 4.0
            cloud = PointCloud(points=points)
            q = points[rng.integers(n)]
            for k in {1, min(4, n), min(64, n), n}:
                got = knn_l1(cloud, q, k).tolist()
                assert got == brute_force_knn(points, q, k), f"trial {trial}, n={n}, k={k}"

    def test_batched_rows_equal_single_queries(self, rng):
        cloud = PointCloud(points=rng.normal(size=(300, 3)))
        rows = knn_l1_all(cloud, 8, block_rows=64)
        assert rows.shape == (300, 8)
        for i in (0, 63, 64, 150, 299):
            assert rows[i].tolist() == knn_l1(cloud, cloud.points[i], 8).tolist()

    def test_row_subset(self, rng):
        cloud = PointCloud(points=rng.normal(size=(50, 3)))
        full = knn_l1_all(cloud, 5)
        subset = knn_l1_all(cloud, 5, rows=[3, 40, 7])
        assert np.array_equal(subset, full[[3, 40, 7]])

    @pytest.mark.parametrize("k", [0, 4])
    def test_invalid_k(self, k):
        cloud = PointCloud.of(np.zeros((3, 3)))
        with pytest.raises(InvalidArgumentError):
            knn_l1(cloud, [0, 0, 0], k)

    def test_empty_cloud(self):
        with pytest.raises(InvalidArgumentError):
            knn_l1(PointCloud.of(np.zeros((0, 3))), [0, 0, 0], 1)

    def test_radius_search_orders_by_distance(self):
        cloud = PointCloud.of([[0.5, 0, 0], [0.1, 0, 0], [2, 0, 0], [0, 0.1, 0]])
        assert radius_neighbors_l1(cloud, [0, 0, 0], 0.6).tolist() == [1, 3, 0]
        assert radius_neighbors_l1(cloud, [5, 5, 5], 0.1).size == 0

    def test_radius_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            radius_neighbors_l1(PointCloud.of([[0, 0, 0]]), [0, 0, 0], 0.0)


class TestNormalize:
    def test_center_at_origin_and_farthest_on_border(self):
        nbhd = normalize_neighborhood([1, 1, 1], [[1.5, 1, 1], [1, 0, 1], [1, 1, 1.25]])
        assert nbhd.k == 4
        assert np.array_equal(nbhd.normalized[0], np.zeros(3))
        assert nbhd.scale == 1.0
        assert np.abs(nbhd.normalized).max() == 1.0
        assert np.array_equal(nbhd.normalized[2], [0.0, -1.0, 0.0])

    def test_coincident_neighbors_normalize_to_zero(self):
        nbhd = normalize_neighborhood([2, 2, 2], [[2, 2, 2], [2, 2, 2]])
        assert nbhd.scale == 0.0
        assert not nbhd.normalized.any()

    def test_scale_override(self):
        nbhd = normalize_neighborhood([0, 0, 0], [[0.5, 0, 0]], scale_override=2.0)
        assert np.array_equal(nbhd.normalized[1], [0.25, 0.0, 0.0])

    def test_no_neighbors_needs_override(self):
        with pytest.raises(InvalidArgumentError):
            normalize_neighborhood([0, 0, 0], np.zeros((0, 3)))
        nbhd = normalize_neighborhood([0, 0, 0], np.zeros((0, 3)), scale_override=1.0)
        assert nbhd.k == 1


class TestAdaptiveK:
    @pytest.mark.parametrize(
        "total,expected",
        [(2048, 64), (512, 16), (1000, 31), (1008, 32), (100, 4), (3, 3), (4096, 128)],
    )
    def test_values(self, total, expected):
        assert adaptive_k(total) == expected

    def test_too_few_points(self):
        with pytest.raises(InvalidArgumentError):
            adaptive_k(1)


class TestChamfer:
    def test_identical_clouds(self, rng):
        pts = rng.normal(size=(20, 3))
        assert chamfer_distance(pts, pts) == 0.0

    def test_singletons(self):
        assert chamfer_distance([[0, 0, 0]], [[3, 0, 0]]) == 18.0

    def test_matches_brute_force(self, rng):
        a, b = rng.normal(size=(15, 3)), rng.normal(size=(9, 3))
        ab = np.mean([min(np.sum((p - q) ** 2) for q in b) for p in a])
        ba = np.mean([min(np.sum((p - q) ** 2) for p in a) for q in b])
        assert abs(chamfer_distance(a, b) - (ab + ba)) <= 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        a, b = rng.normal(size=(12, 3)), rng.normal(size=(17, 3))
        _, grad = chamfer_with_grad(a, b)
        h = 1e-6
        for i in range(a.shape[0]):
            for j in range(3):
                plus, minus = a.copy(), a.copy()
                plus[i, j] += h
                minus[i, j] -= h
                fd = (chamfer_distance(plus, b) - chamfer_distance(minus, b)) / (2 * h)
                assert abs(fd - grad[i, j]) <= 1e-6 * max(1.0, abs(fd)), f"point {i}, axis {j}"

    def test_empty_cloud_rejected(self):
        with pytest.raises(InvalidArgumentError):
            chamfer_distance(np.zeros((0, 3)), [[0, 0, 0]])


class TestSubsample:
    def test_keeps_order_and_normals(self, rng):
        pts = rng.normal(size=(100, 3))
        normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        cloud = PointCloud.of(pts, normals)
        sub = subsample_cloud(cloud, 30, seed=3)
        assert len(sub) == 30
        rows = [int(np.nonzero((pts == p).all(axis=1))[0][0]) for p in sub.points]
        assert rows == sorted(rows)
        assert np.array_equal(sub.normals, normals[rows])
        assert np.array_equal(sub.points, subsample_cloud(cloud, 30, seed=3).points)

    def test_larger_request_returns_cloud(self, rng):
        cloud = PointCloud(points=rng.normal(size=(10, 3)))
        assert subsample_cloud(cloud, 50, seed=0) is cloud
