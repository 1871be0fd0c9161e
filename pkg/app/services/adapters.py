"""
Representation adapters: turn point clouds, triangle meshes and voxel
volumes into query points + context points and embed them with the field.

Meshes: the query points (vertices, edge midpoints or face barycenters) are
combined with denser points re-sampled on the faces, and each query is
embedded against that combined set. Voxels: occupied voxel centers act as
virtual points and the neighborhood is a fixed L1 radius instead of KNN.
"""

import logging
from typing import Optional

import numpy as np

from config import settings
from models.field import EmbeddingMatrix, FieldGrid
from models.geometry import MeshElementKind, PointCloud, TriMesh, VoxelVolume
from services.errors import InvalidArgumentError
from services.field_grid import embed_cloud, sample_points
from services.geometry import adaptive_k

logger = logging.getLogger(__name__)


def cloud_embeddings(
    grid: FieldGrid, cloud: PointCloud, k: Optional[int] = None
) -> EmbeddingMatrix:
    """Point-cloud entry point. K follows the point count when not given."""
    k = adaptive_k(len(cloud)) if k is None else k
    return embed_cloud(grid, cloud, k)


def default_surface_samples(mesh: TriMesh) -> int:
    return max(settings.min_surface_samples, settings.surface_samples_per_vertex * mesh.n_vertices)


def resample_mesh_surface(mesh: TriMesh, n_samples: int, seed: int) -> PointCloud:
    """
    Area-weighted uniform samples on the mesh surface.

    Per-face counts come from one multinomial draw seeded by `seed`; the
    barycentric coordinates inside face f use a generator keyed by (seed, f),
    so relabelling vertices leaves the samples unchanged while reordering
    faces does not.
    """
    if mesh.n_faces == 0:
        raise InvalidArgumentError("mesh has no faces to sample")
    if n_samples < 1:
        raise InvalidArgumentError(f"n_samples must be positive, got {n_samples}")
    areas = mesh.face_areas()
    total = float(areas.sum())
    if not total > 0:
        raise InvalidArgumentError("mesh has zero surface area")

    counts = np.random.default_rng(seed).multinomial(n_samples, areas / total)
    tri = mesh.vertices[mesh.faces]
    chunks = []
    for face in np.nonzero(counts)[0]:
        rng = np.random.default_rng([seed, int(face)])
        r1, r2 = rng.random((2, int(counts[face])))
        root = np.sqrt(r1)
        bary = np.stack([1.0 - root, root * (1.0 - r2), root * r2], axis=1)
        chunks.append(bary @ tri[face])
    logger.debug(f"Sampled {n_samples} surface points over {mesh.n_faces} faces")
    return PointCloud(points=np.concatenate(chunks, axis=0))


def mesh_query_points(mesh: TriMesh, kind: MeshElementKind) -> np.ndarray:
    """Vertices, midpoints of the sorted undirected edges, or face barycenters."""
    v = mesh.vertices
    if kind == "vertex":
        return np.array(v)
    if kind == "edge_midpoint":
        e = mesh.edges
        return (v[e[:, 0]] + v[e[:, 1]]) / 2.0
    if kind == "face_barycenter":
        f = mesh.faces
        return (v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]) / 3.0
    raise InvalidArgumentError(f"unknown mesh element kind: {kind}")


def mesh_element_embeddings(
    grid: FieldGrid,
    mesh: TriMesh,
    kind: MeshElementKind,
    n_samples: Optional[int] = None,
    k: Optional[int] = None,
    seed: int = 0,
) -> EmbeddingMatrix:
    """
    One embedding per mesh element, in element order. Context is the query
    points followed by the surface samples; only query rows are embedded.
    """
    n_samples = default_surface_samples(mesh) if n_samples is None else n_samples
    queries = mesh_query_points(mesh, kind)
    samples = resample_mesh_surface(mesh, n_samples, seed)
    combined = PointCloud(points=np.concatenate([queries, samples.points], axis=0))
    k = adaptive_k(len(combined)) if k is None else k
    logger.debug(f"Embedding {queries.shape[0]} {kind} rows against {len(combined)} points")
    return embed_cloud(grid, combined, k, rows=np.arange(queries.shape[0]))


def voxel_virtual_points(vol: VoxelVolume) -> PointCloud:
    """Centers of occupied voxels in [-1, 1]^3, in (ix, iy, iz) lexicographic order."""
    idx = np.argwhere(vol.occupancy)
    return PointCloud(points=-1.0 + (2.0 * idx + 1.0) / vol.size)


def l1_ball_offsets(radius_voxels: int) -> np.ndarray:
    """Integer offsets d with |d|_1 <= radius, lexicographic."""
    span = np.arange(-radius_voxels, radius_voxels + 1)
    grid = np.stack(np.meshgrid(span, span, span, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).sum(axis=1) <= radius_voxels]


def voxel_embeddings(
    grid: FieldGrid, vol: VoxelVolume, radius_voxels: Optional[int] = None
) -> np.ndarray:
    """
    N x N x N x C embeddings, one per voxel center (occupied or not).

    Neighbors are the occupied voxel centers within L1 distance
    r = 2 * radius_voxels / N, normalized by r itself. A center d voxels away
    therefore lands at d / radius_voxels, so every offset in the ball has one
    fixed field sample. Voxels with no occupied neighbor get a zero vector.
    """
    rv = settings.radius_voxels if radius_voxels is None else radius_voxels
    if rv < 1:
        raise InvalidArgumentError(f"radius_voxels must be at least 1, got {rv}")
    n, c = vol.size, grid.channels
    offsets = l1_ball_offsets(rv)
    samples = sample_points(grid, offsets / rv)  # (M, C)
    center_value = sample_points(grid, np.zeros(3))

    padded = np.pad(vol.occupancy, rv, mode="constant", constant_values=False)
    best = np.full((n, n, n, c), -np.inf)
    touched = np.zeros((n, n, n), dtype=bool)
    for j, (dx, dy, dz) in enumerate(offsets):
        shifted = padded[rv + dx : rv + dx + n, rv + dy : rv + dy + n, rv + dz : rv + dz + n]
        if not shifted.any():
            continue
        touched |= shifted
        best = np.where(shifted[..., None], np.maximum(best, samples[j]), best)
    out = np.where(touched[..., None], np.maximum(best, center_value), 0.0)
    logger.debug(f"Voxel embeddings N={n}, radius={rv}: {int(touched.sum())} non-empty")
    return out
