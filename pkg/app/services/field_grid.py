"""
The shape field: trilinear lookups into an R x R x R x C grid and the
max-pooled embedding of normalized neighborhoods.

    SE(P) = max_k  GS( N([P, P_neigh]) )_k

Lookups are split in two steps so training can reuse them: `locate` turns
normalized points into 8 corner indices + weights (independent of the grid
values), `embed_tape` reads the grid through them. A forward over K points
performs exactly 8K weighted reads per channel.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from config import settings
from models.field import ComplexityReport, EmbeddingMatrix, FieldGrid, InitScheme, InterpTape
from models.geometry import LocalNeighborhood, PointCloud
from services.errors import InvalidArgumentError, InvalidStateError, OutOfDomainError
from services.geometry import knn_l1_all, neighbor_rows, normalize_batch

logger = logging.getLogger(__name__)

# Corner offsets (dx, dy, dz) in lexicographic order.
_CORNERS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])


def init_grid(
    resolution: int,
    channels: int,
    scheme: InitScheme = "uniform",
    scale: Optional[float] = None,
    seed: int = 0,
) -> FieldGrid:
    """
    Fresh grid drawn from uniform(-scale, scale) or normal(0, scale).
    Deterministic in `seed`.
    """
    if resolution < 2:
        raise InvalidArgumentError(f"resolution must be at least 2, got {resolution}")
    if channels < 1:
        raise InvalidArgumentError(f"channels must be at least 1, got {channels}")
    scale = settings.init_scale if scale is None else scale
    if scale < 0:
        raise InvalidArgumentError(f"init scale must be non-negative, got {scale}")
    rng = np.random.default_rng(seed)
    shape = (resolution, resolution, resolution, channels)
    if scheme == "uniform":
        values = rng.uniform(-scale, scale, size=shape)
    elif scheme == "normal":
        values = rng.normal(0.0, scale, size=shape)
    else:
        raise InvalidArgumentError(f"unknown init scheme: {scheme}")
    return FieldGrid(values=values)


def locate(points: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Corner node indices and trilinear weights for points in [-1, 1]^3.

    Returns (..., 8) flat indices (ix * R^2 + iy * R + iz) and (..., 8)
    weights that are non-negative and sum to 1. Components outside the cube
    by at most the domain tolerance are clamped; anything further is an error.
    """
    pts = np.asarray(points, dtype=np.float64)
    tol = settings.domain_tolerance
    if not np.all(np.isfinite(pts)):
        raise OutOfDomainError("query point is not finite")
    if pts.size and np.abs(pts).max() > 1.0 + tol:
        worst = float(np.abs(pts).max())
        raise OutOfDomainError(f"query component {worst!r} outside [-1, 1]")
    pts = np.clip(pts, -1.0, 1.0)
    r = resolution
    u = (pts + 1.0) / 2.0 * (r - 1)
    base = np.clip(np.floor(u), 0, r - 2).astype(np.int64)
    frac = u - base

    nodes = base[..., None, :] + _CORNERS
    corners = nodes[..., 0] * (r * r) + nodes[..., 1] * r + nodes[..., 2]
    per_axis = np.where(_CORNERS == 1, frac[..., None, :], 1.0 - frac[..., None, :])
    weights = per_axis[..., 0] * per_axis[..., 1] * per_axis[..., 2]
    return corners, weights


def _read(grid: FieldGrid, corners: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # (..., 8) x (..., 8, C) -> (..., C)
    return np.einsum("...j,...jc->...c", weights, grid.flat[corners])


def sample_trilinear(grid: FieldGrid, q, with_tape: bool = False):
    """Blend of the 8 nodes around q. Returns (C,) values, plus a tape when asked."""
    point = np.asarray(q, dtype=np.float64).reshape(1, 1, 3)
    corners, weights = locate(point, grid.resolution)
    value = _read(grid, corners, weights)[0, 0]
    if not with_tape:
        return value
    tape = InterpTape(
        resolution=grid.resolution, channels=grid.channels, corners=corners, weights=weights
    )
    return value, tape


def sample_points(grid: FieldGrid, points: np.ndarray) -> np.ndarray:
    """sample_trilinear over an array of points: (..., 3) -> (..., C)."""
    corners, weights = locate(points, grid.resolution)
    return _read(grid, corners, weights)


def tape_for(normalized: np.ndarray, resolution: int, channels: int) -> InterpTape:
    """Locate (B, K, 3) normalized neighborhoods; the tape has no argmax yet."""
    normalized = np.asarray(normalized, dtype=np.float64)
    if normalized.ndim != 3 or normalized.shape[1] < 1:
        raise InvalidArgumentError(f"expected (B, K, 3) neighborhoods, got {normalized.shape}")
    corners, weights = locate(normalized, resolution)
    return InterpTape(resolution=resolution, channels=channels, corners=corners, weights=weights)


def _check_tape(grid: FieldGrid, tape: InterpTape) -> None:
    if tape.resolution != grid.resolution or tape.channels != grid.channels:
        raise InvalidArgumentError(
            f"tape recorded for R={tape.resolution}, C={tape.channels}; "
            f"grid has R={grid.resolution}, C={grid.channels}"
        )


def embed_tape(
    grid: FieldGrid, tape: InterpTape, version: int = 0
) -> tuple[np.ndarray, InterpTape]:
    """
    Max-pooled embeddings (B, C) for located neighborhoods, and the tape
    completed with the winning row per channel (lowest row on ties).
    """
    _check_tape(grid, tape)
    samples = _read(grid, tape.corners, tape.weights)  # (B, K, C)
    argmax = samples.argmax(axis=1)
    embedding = np.take_along_axis(samples, argmax[:, None, :], axis=1)[:, 0, :]
    done = tape.model_copy(update={"argmax": argmax, "version": version})
    return embedding, done


def embed_neighborhood(grid: FieldGrid, nbhd: LocalNeighborhood, with_tape: bool = False):
    """Embedding of one normalized neighborhood: channel-wise max over its K samples."""
    if nbhd.k < 1:
        raise InvalidArgumentError("neighborhood has no points")
    tape = tape_for(nbhd.normalized[None], grid.resolution, grid.channels)
    embedding, tape = embed_tape(grid, tape)
    if with_tape:
        return embedding[0], tape
    return embedding[0]


def prepare_cloud(
    cloud: PointCloud,
    k: int,
    resolution: int,
    channels: int,
    rows: Optional[Sequence[int]] = None,
) -> InterpTape:
    """
    Neighborhood lookups for the given rows of a cloud (all rows by default).
    Depends only on geometry and R, so it can be computed once and reused
    while the grid values change.
    """
    rows = np.arange(len(cloud)) if rows is None else np.asarray(rows, dtype=np.int64)
    knn = knn_l1_all(cloud, k, rows=rows)
    neighbors = neighbor_rows(knn, rows)
    pts = cloud.points
    normalized = normalize_batch(pts[rows], pts[neighbors])
    return tape_for(normalized, resolution, channels)


def embed_cloud(
    grid: FieldGrid,
    cloud: PointCloud,
    k: int,
    rows: Optional[Sequence[int]] = None,
    block_rows: Optional[int] = None,
) -> EmbeddingMatrix:
    """
    Shape embeddings for every point (or only `rows`), in input order.
    Each row depends only on its own K-neighborhood.
    """
    rows = np.arange(len(cloud)) if rows is None else np.asarray(rows, dtype=np.int64)
    block = block_rows or settings.knn_block_rows
    out = np.empty((rows.shape[0], grid.channels))
    for start in range(0, rows.shape[0], block):
        sel = rows[start : start + block]
        tape = prepare_cloud(cloud, k, grid.resolution, grid.channels, rows=sel)
        out[start : start + block], _ = embed_tape(grid, tape)
    logger.debug(f"Embedded {rows.shape[0]} rows with K={k}, C={grid.channels}")
    return out


def grad_embed_batch(tape: InterpTape, upstream: np.ndarray, out: Optional[np.ndarray] = None):
    """
    Scatter upstream gradients (B, C) of the embeddings into a dense grid gradient.

    Each channel's gradient reaches only the 8 corners of that channel's
    argmax sample, weighted by its trilinear weights. Accumulates into `out`
    when given.
    """
    if tape.argmax is None:
        raise InvalidStateError("tape has no max-pool record; run the forward pass first")
    r, c = tape.resolution, tape.channels
    upstream = np.asarray(upstream, dtype=np.float64)
    b = tape.n_neighborhoods
    if upstream.shape != (b, c):
        raise InvalidArgumentError(f"upstream must have shape {(b, c)}, got {upstream.shape}")
    grad = np.zeros((r, r, r, c)) if out is None else out
    if grad.shape != (r, r, r, c):
        raise InvalidArgumentError(f"gradient buffer has shape {grad.shape}")

    rows = np.arange(b)[:, None]
    win_corners = tape.corners[rows, tape.argmax]  # (B, C, 8)
    win_weights = tape.weights[rows, tape.argmax]
    flat = win_corners * c + np.arange(c)[None, :, None]
    contrib = win_weights * upstream[:, :, None]
    grad += np.bincount(flat.ravel(), weights=contrib.ravel(), minlength=r**3 * c).reshape(
        r, r, r, c
    )
    return grad


def grad_embed_wrt_grid(
    grid: FieldGrid,
    nbhd: LocalNeighborhood,
    upstream,
    tape: InterpTape,
    out: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient of <upstream, embed_neighborhood(grid, nbhd)> with respect to the grid values."""
    _check_tape(grid, tape)
    if tape.n_neighborhoods != 1 or tape.corners.shape[1] != nbhd.k:
        raise InvalidArgumentError("tape does not belong to this neighborhood")
    upstream = np.asarray(upstream, dtype=np.float64).reshape(1, -1)
    return grad_embed_batch(tape, upstream, out=out)


def augment_features(cloud: PointCloud, embeddings: EmbeddingMatrix) -> np.ndarray:
    """Embeddings with the coordinates appended: N x (C + 3)."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] != len(cloud):
        raise InvalidArgumentError(
            f"need one embedding row per point ({len(cloud)}), got {embeddings.shape}"
        )
    return np.concatenate([embeddings, cloud.points], axis=1)


def complexity_report(n_points: int, k: int, resolution: int, channels: int) -> ComplexityReport:
    """Operation counts of one embed_cloud call: N^2 KNN distances, 8NK reads, R^3 C parameters."""
    if n_points < 1 or not 1 <= k <= n_points:
        raise InvalidArgumentError(f"invalid sizes N={n_points}, K={k}")
    return ComplexityReport(
        n_points=n_points,
        k=k,
        resolution=resolution,
        channels=channels,
        knn_distance_evaluations=n_points * n_points,
        interpolation_reads=8 * n_points * k,
        parameters=resolution**3 * channels,
    )
