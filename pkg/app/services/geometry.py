"""
Point-set primitives: L1 neighbor search, neighborhood normalization and
chamfer distance. Everything here is a pure function of its inputs.

KNN is an exact brute-force scan (N^2 distance evaluations per cloud); ties
on distance go to the lower index.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np

from config import settings
from models.geometry import LocalNeighborhood, PointCloud, as_point3
from services.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def _l1_to(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """L1 distances from (N, 3) points to one (3,) query or to (B, 1, 3) queries."""
    # Fixed summation order so single and batched searches agree bit for bit.
    return (
        np.abs(points[..., 0] - q[..., 0])
        + np.abs(points[..., 1] - q[..., 1])
        + np.abs(points[..., 2] - q[..., 2])
    )


def _check_k(cloud: PointCloud, k: int) -> None:
    n = len(cloud)
    if n == 0:
        raise InvalidArgumentError("cannot search an empty cloud")
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, {n}], got {k}")


def knn_l1(cloud: PointCloud, query, k: int) -> np.ndarray:
    """Indices of the k points nearest to `query` in L1, ordered by (distance, index)."""
    _check_k(cloud, k)
    q = as_point3(query)
    dist = _l1_to(cloud.points, q)
    return np.argsort(dist, kind="stable")[:k]


def knn_l1_all(
    cloud: PointCloud,
    k: int,
    rows: Optional[Sequence[int]] = None,
    block_rows: Optional[int] = None,
) -> np.ndarray:
    """
    KNN for many query points of the cloud itself, one row per query.

    Row r equals knn_l1(cloud, cloud.points[rows[r]], k). Distances are
    computed in blocks of queries to bound memory at block_rows x N.
    """
    _check_k(cloud, k)
    pts = cloud.points
    rows = np.arange(len(cloud)) if rows is None else np.asarray(rows, dtype=np.int64)
    block = block_rows or settings.knn_block_rows
    out = np.empty((rows.shape[0], k), dtype=np.int64)
    for start in range(0, rows.shape[0], block):
        sel = rows[start : start + block]
        dist = _l1_to(pts[None, :, :], pts[sel][:, None, :])
        out[start : start + block] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


def radius_neighbors_l1(cloud: PointCloud, query, radius: float) -> np.ndarray:
    """All indices within L1 `radius` of `query`, ordered by (distance, index). May be empty."""
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    q = as_point3(query)
    if len(cloud) == 0:
        return np.zeros(0, dtype=np.int64)
    dist = _l1_to(cloud.points, q)
    inside = np.nonzero(dist <= radius)[0]
    return inside[np.argsort(dist[inside], kind="stable")]


def normalize_neighborhood(
    center,
    neighbor_points,
    scale_override: Optional[float] = None,
) -> LocalNeighborhood:
    """
    Move the center to the origin and scale so the farthest neighbor (in L-inf)
    touches the cube border. A fixed `scale_override` replaces the farthest
    distance. Coincident neighborhoods normalize to all zeros.
    """
    c = as_point3(center)
    nb = np.asarray(neighbor_points, dtype=np.float64).reshape(-1, 3)
    if nb.shape[0] == 0 and scale_override is None:
        raise InvalidArgumentError("need at least one neighbor or a scale_override")
    rel = nb - c
    if scale_override is not None:
        if not (math.isfinite(scale_override) and scale_override > 0):
            raise InvalidArgumentError(f"scale_override must be positive, got {scale_override}")
        scale = float(scale_override)
    else:
        scale = float(np.abs(rel).max())
    scaled = rel / scale if scale > 0 else np.zeros_like(rel)
    normalized = np.concatenate([np.zeros((1, 3)), scaled], axis=0)
    return LocalNeighborhood.create(center=c, neighbors=nb, normalized=normalized, scale=scale)


def neighbor_rows(knn: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """
    Drop each query's own index from its KNN row, keeping K-1 neighbors.

    When the query's index was displaced by duplicates at lower indices the
    last (farthest) entry is dropped instead.
    """
    k = knn.shape[1]
    position = np.broadcast_to(np.arange(k), knn.shape)
    key = np.where(knn == rows[:, None], k, position)
    keep = np.argsort(key, axis=1, kind="stable")[:, : k - 1]
    return np.take_along_axis(knn, keep, axis=1)


def normalize_batch(centers: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """
    Batched normalize_neighborhood without override: (B, 3) centers and
    (B, K-1, 3) neighbors give (B, K, 3) normalized points, center first.
    """
    rel = neighbors - centers[:, None, :]
    if rel.shape[1]:
        scale = np.abs(rel).max(axis=(1, 2))
    else:
        scale = np.zeros(rel.shape[0])
    safe = np.where(scale > 0, scale, 1.0)
    scaled = np.where(scale[:, None, None] > 0, rel / safe[:, None, None], 0.0)
    origin = np.zeros((rel.shape[0], 1, 3))
    return np.concatenate([origin, scaled], axis=1)


def adaptive_k(
    total_points: int,
    base_k: Optional[int] = None,
    base_n: Optional[int] = None,
) -> int:
    """K proportional to the point count (64 for 2048), clamped to [4, total_points]."""
    base_k = settings.base_k if base_k is None else base_k
    base_n = settings.base_n if base_n is None else base_n
    if total_points < 2:
        raise InvalidArgumentError(f"need at least 2 points, got {total_points}")
    if base_k < 1 or base_n < 1:
        raise InvalidArgumentError("base_k and base_n must be positive")
    # round half up
    k = int(math.floor(base_k * total_points / base_n + 0.5))
    return min(max(k, settings.min_k), total_points)


def _squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (
        (a[:, None, 0] - b[None, :, 0]) ** 2
        + (a[:, None, 1] - b[None, :, 1]) ** 2
        + (a[:, None, 2] - b[None, :, 2]) ** 2
    )


def _as_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if pts.shape[0] == 0:
        raise InvalidArgumentError("chamfer distance needs non-empty clouds")
    return pts


def chamfer_distance(a, b) -> float:
    """Mean squared nearest-neighbor distance from a to b plus from b to a."""
    pa, pb = _as_points(a), _as_points(b)
    d2 = _squared_distances(pa, pb)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def chamfer_with_grad(a, b) -> tuple[float, np.ndarray]:
    """
    Chamfer distance and its gradient with respect to the points of `a`.
    Nearest-match assignments are held fixed (argmin ties go to the lower index).
    """
    pa, pb = _as_points(a), _as_points(b)
    d2 = _squared_distances(pa, pb)
    nearest_b = d2.argmin(axis=1)
    nearest_a = d2.argmin(axis=0)
    value = float(
        d2[np.arange(pa.shape[0]), nearest_b].mean()
        + d2[nearest_a, np.arange(pb.shape[0])].mean()
    )
    grad = 2.0 * (pa - pb[nearest_b]) / pa.shape[0]
    np.add.at(grad, nearest_a, 2.0 * (pa[nearest_a] - pb) / pb.shape[0])
    return value, grad


def subsample_cloud(cloud: PointCloud, n_points: int, seed: int) -> PointCloud:
    """Random subset of n_points without replacement, in original order."""
    if n_points < 1:
        raise InvalidArgumentError(f"n_points must be positive, got {n_points}")
    if n_points >= len(cloud):
        return cloud
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(cloud), size=n_points, replace=False))
    logger.debug(f"Subsampled {len(cloud)} -> {n_points} points")
    return cloud.subset(rows)
