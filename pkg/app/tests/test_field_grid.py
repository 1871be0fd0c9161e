"""Trilinear lookups, neighborhood embeddings and their gradient."""

import math

import numpy as np
import pytest

from models.field import FieldGrid
from models.geometry import PointCloud
from services.errors import InvalidArgumentError, InvalidStateError, OutOfDomainError
from services.field_grid import (
    augment_features,
    complexity_report,
    embed_cloud,
    embed_neighborhood,
    grad_embed_batch,
    grad_embed_wrt_grid,
    init_grid,
    locate,
    sample_points,
    sample_trilinear,
    tape_for,
)
from services.geometry import normalize_neighborhood


def oracle_sample(values: np.ndarray, q) -> np.ndarray:
    """Direct 8-corner weighted sum, one axis at a time."""
    r = values.shape[0]
    base, frac = [], []
    for x in q:
        u = (min(max(x, -1.0), 1.0) + 1.0) / 2.0 * (r - 1)
        i = min(int(math.floor(u)), r - 2)
        base.append(i)
        frac.append(u - i)
    out = np.zeros(values.shape[3])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (frac[0] if dx else 1 - frac[0])
                    * (frac[1] if dy else 1 - frac[1])
                    * (frac[2] if dz else 1 - frac[2])
                )
                out += w * values[base[0] + dx, base[1] + dy, base[2] + dz]
    return out


class TestTrilinear:
    def test_matches_corner_oracle(self):
        rng = np.random.default_rng(5)
        for trial in range(1000):
            r = int(rng.choice([2, 4, 8, 16]))
            c = int(rng.choice([1, 8, 32]))
            values = rng.normal(size=(r, r, r, c))
            grid = FieldGrid(values=values)
            q = rng.uniform(-1, 1, size=3)
            got = sample_trilinear(grid, q)
            assert np.max(np.abs(got - oracle_sample(values, q))) <= 1e-12, f"trial {trial}"

    def test_nodes_return_node_values(self, rng):
        values = rng.normal(size=(5, 5, 5, 2))
        grid = FieldGrid(values=values)
        for ix, iy, iz in [(0, 0, 0), (4, 4, 4), (2, 1, 3), (4, 0, 2)]:
            q = [-1 + 0.5 * ix, -1 + 0.5 * iy, -1 + 0.5 * iz]
            assert np.array_equal(sample_trilinear(grid, q), values[ix, iy, iz])

    def test_weights_are_a_partition_of_unity(self, rng):
        corners, weights = locate(rng.uniform(-1, 1, size=(50, 3)), 6)
        assert corners.shape == weights.shape == (50, 8)
        assert np.all(weights >= 0)
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-15)
        assert corners.min() >= 0 and corners.max() < 6**3

    def test_tolerance_clamps_and_beyond_raises(self, small_grid):
        edge = sample_trilinear(small_grid, [1.0, 0.0, -1.0])
        nudged = sample_trilinear(small_grid, [1.0 + 1e-10, 0.0, -1.0 - 1e-10])
        assert np.array_equal(edge, nudged)
        with pytest.raises(OutOfDomainError):
            sample_trilinear(small_grid, [1.0 + 1e-6, 0.0, 0.0])

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_queries_raise(self, small_grid, bad):
        with pytest.raises(OutOfDomainError):
            sample_trilinear(small_grid, [bad, 0.0, 0.0])
        with pytest.raises(OutOfDomainError):
            sample_points(small_grid, np.array([[0.0, 0.0, 0.0], [0.5, bad, 0.0]]))

    def test_linear_in_the_grid(self, rng):
        g1 = rng.normal(size=(5, 5, 5, 3))
        g2 = rng.normal(size=(5, 5, 5, 3))
        q = rng.uniform(-1, 1, size=(200, 3))
        a = sample_points(FieldGrid(values=g1), q)
        b = sample_points(FieldGrid(values=g2), q)
        assert np.allclose(sample_points(FieldGrid(values=g1 + g2), q), a + b, rtol=0, atol=1e-13)
        for lam in (-3.0, 0.5, 7.25):
            scaled = sample_points(FieldGrid(values=lam * g1), q)
            assert np.allclose(scaled, lam * a, rtol=0, atol=1e-13)

    def test_constant_grid(self):
        grid = FieldGrid(values=np.full((3, 3, 3, 4), 0.7))
        assert np.allclose(sample_points(grid, np.zeros((5, 3))), 0.7, atol=1e-15)


class TestGridConstruction:
    def test_init_is_deterministic_and_bounded(self):
        a = init_grid(4, 3, scale=0.1, seed=1)
        assert np.array_equal(a.values, init_grid(4, 3, scale=0.1, seed=1).values)
        assert np.abs(a.values).max() <= 0.1
        assert not np.array_equal(a.values, init_grid(4, 3, scale=0.1, seed=2).values)

    def test_normal_scheme(self):
        grid = init_grid(8, 4, scheme="normal", scale=0.5, seed=0)
        assert abs(grid.values.std() - 0.5) < 0.05

    @pytest.mark.parametrize("r,c", [(1, 4), (4, 0)])
    def test_invalid_sizes(self, r, c):
        with pytest.raises(InvalidArgumentError):
            init_grid(r, c)

    def test_non_finite_values_rejected(self):
        values = np.zeros((2, 2, 2, 1))
        values[0, 0, 0, 0] = np.nan
        with pytest.raises(InvalidArgumentError):
            FieldGrid.of(values)

    def test_values_are_read_only(self, small_grid):
        with pytest.raises(ValueError):
            small_grid.values[0, 0, 0, 0] = 1.0


class TestEmbedding:
    def test_embedding_is_channelwise_max(self, small_grid, rng):
        nbhd = normalize_neighborhood([0, 0, 0], rng.uniform(-1, 1, size=(7, 3)))
        expected = sample_points(small_grid, nbhd.normalized).max(axis=0)
        assert np.allclose(embed_neighborhood(small_grid, nbhd), expected, rtol=0, atol=1e-14)

    def test_constant_grid_embeds_to_constant(self, rng):
        grid = FieldGrid(values=np.full((4, 4, 4, 3), -2.5))
        cloud = PointCloud(points=rng.normal(size=(40, 3)))
        assert np.allclose(embed_cloud(grid, cloud, 6), -2.5, atol=1e-15)

    def test_raising_one_value_never_lowers_an_embedding(self, small_grid, rng):
        cloud = PointCloud(points=rng.normal(size=(60, 3)))
        before = embed_cloud(small_grid, cloud, 8)
        for node in [(1, 1, 1, 0), (2, 1, 2, 2), (0, 3, 0, 1)]:
            values = np.array(small_grid.values)
            values[node] += 10.0
            after = embed_cloud(FieldGrid(values=values), cloud, 8)
            assert np.all(after >= before), f"bumping {node} lowered an embedding"
            others = [c for c in range(small_grid.channels) if c != node[3]]
            assert np.array_equal(after[:, others], before[:, others])
        values = np.array(small_grid.values)
        values[1, 1, 1, 0] += 10.0
        assert np.any(embed_cloud(FieldGrid(values=values), cloud, 8)[:, 0] > before[:, 0])

    def test_neighbor_order_does_not_matter(self, small_grid, rng):
        neighbors = rng.normal(size=(9, 3))
        a = normalize_neighborhood([0.1, 0.2, 0.3], neighbors)
        b = normalize_neighborhood([0.1, 0.2, 0.3], neighbors[rng.permutation(9)])
        assert np.array_equal(embed_neighborhood(small_grid, a), embed_neighborhood(small_grid, b))

    def test_translation_invariance(self, small_grid, dyadic_cloud):
        moved = PointCloud(points=dyadic_cloud.points + np.array([0.5, -0.25, 1.0]))
        assert np.array_equal(
            embed_cloud(small_grid, dyadic_cloud, 8), embed_cloud(small_grid, moved, 8)
        )

    @pytest.mark.parametrize("factor", [0.5, 2.0, 8.0])
    def test_scale_invariance(self, small_grid, dyadic_cloud, factor):
        scaled = PointCloud(points=dyadic_cloud.points * factor)
        assert np.array_equal(
            embed_cloud(small_grid, dyadic_cloud, 8), embed_cloud(small_grid, scaled, 8)
        )

    def test_invariances_on_random_dyadic_clouds(self, small_grid):
        rng = np.random.default_rng(17)
        for trial in range(50):
            n = int(rng.integers(8, 80))
            points = rng.integers(-8, 9, size=(n, 3)) / 8.0
            k = int(rng.integers(2, 9))
            base = embed_cloud(small_grid, PointCloud(points=points), k)
            shift = rng.integers(-4, 5, size=3) / 4.0
            factor = 2.0 ** int(rng.integers(-3, 4))
            for moved in (points + shift, points * factor):
                got = embed_cloud(small_grid, PointCloud(points=moved), k)
                assert np.array_equal(base, got), f"trial {trial}"

    def test_point_permutation_permutes_rows(self, small_grid, rng):
        cloud = PointCloud(points=rng.normal(size=(60, 3)))
        perm = rng.permutation(60)
        shuffled = PointCloud(points=cloud.points[perm])
        assert np.array_equal(
            embed_cloud(small_grid, cloud, 8)[perm], embed_cloud(small_grid, shuffled, 8)
        )

    def test_row_subset_and_blocks(self, small_grid, rng):
        cloud = PointCloud(points=rng.normal(size=(90, 3)))
        full = embed_cloud(small_grid, cloud, 5, block_rows=16)
        assert np.array_equal(full, embed_cloud(small_grid, cloud, 5))
        assert np.array_equal(embed_cloud(small_grid, cloud, 5, rows=[80, 2]), full[[80, 2]])

    def test_augment_features(self, small_grid, rng):
        cloud = PointCloud(points=rng.normal(size=(10, 3)))
        feats = augment_features(cloud, embed_cloud(small_grid, cloud, 4))
        assert feats.shape == (10, small_grid.channels + 3)
        assert np.array_equal(feats[:, -3:], cloud.points)
        with pytest.raises(InvalidArgumentError):
            augment_features(cloud, np.zeros((9, 3)))


class TestGridGradient:
    def test_matches_finite_differences(self, rng):
        values = rng.normal(size=(4, 4, 4, 3))
        grid = FieldGrid(values=values)
        nbhd = normalize_neighborhood([0, 0, 0], rng.uniform(-1, 1, size=(6, 3)))
        upstream = rng.normal(size=3)
        _, tape = embed_neighborhood(grid, nbhd, with_tape=True)
        grad = grad_embed_wrt_grid(grid, nbhd, upstream, tape)

        def objective(v):
            return float(upstream @ embed_neighborhood(FieldGrid(values=v), nbhd))

        h = 1e-6
        touched = np.argwhere(grad != 0)
        assert touched.shape[0] > 0
        for idx in [tuple(t) for t in touched] + [(0, 0, 0, 0), (3, 3, 3, 2)]:
            plus, minus = values.copy(), values.copy()
            plus[idx] += h
            minus[idx] -= h
            fd = (objective(plus) - objective(minus)) / (2 * h)
            assert abs(fd - grad[idx]) <= 1e-6, f"node {idx}"

    def test_only_winning_corners_receive_gradient(self, small_grid, rng):
        nbhd = normalize_neighborhood([0, 0, 0], rng.uniform(-1, 1, size=(5, 3)))
        _, tape = embed_neighborhood(small_grid, nbhd, with_tape=True)
        grad = grad_embed_wrt_grid(small_grid, nbhd, np.ones(3), tape)
        for c in range(3):
            winner = tape.argmax[0, c]
            allowed = set(tape.corners[0, winner].tolist())
            nonzero = set(np.flatnonzero(grad[..., c].reshape(-1)).tolist())
            assert nonzero <= allowed, f"channel {c}"
            assert abs(grad[..., c].sum() - 1.0) <= 1e-12

    def test_zero_upstream_gives_zero_gradient(self, small_grid, rng):
        nbhd = normalize_neighborhood([0, 0, 0], rng.uniform(-1, 1, size=(5, 3)))
        _, tape = embed_neighborhood(small_grid, nbhd, with_tape=True)
        assert not grad_embed_wrt_grid(small_grid, nbhd, np.zeros(3), tape).any()

    def test_tape_without_forward_is_rejected(self, small_grid):
        tape = tape_for(np.zeros((1, 2, 3)), small_grid.resolution, small_grid.channels)
        with pytest.raises(InvalidStateError):
            grad_embed_batch(tape, np.ones((1, 3)))


def test_complexity_report():
    report = complexity_report(2048, 64, 16, 32)
    assert report.knn_distance_evaluations == 2048**2
    assert report.interpolation_reads == 8 * 2048 * 64
    assert report.parameters == 16**3 * 32
