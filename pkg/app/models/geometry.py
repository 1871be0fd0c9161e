from typing import Literal, Optional

import numpy as np
from pydantic import field_validator, model_validator

from models.base import ArrayModel, frozen_array, require_finite
from services.errors import InvalidArgumentError

# A point is a length-3 float64 array; clouds store points as rows of an (N, 3) array.
Point3 = np.ndarray

MeshElementKind = Literal["vertex", "edge_midpoint", "face_barycenter"]


def as_point3(value) -> Point3:
    """Validate a single point: three finite coordinates."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise InvalidArgumentError(f"a point needs 3 coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("point coordinates must be finite")
    return arr


def _as_rows3(value, what: str) -> np.ndarray:
    arr = frozen_array(value)
    if arr.size == 0:
        arr = frozen_array(np.zeros((0, 3)))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{what} must have shape (N, 3), got {arr.shape}")
    return require_finite(arr, what)


class PointCloud(ArrayModel):
    """
    Ordered point set X (N x 3), optionally with one normal per point.

    An empty cloud is representable (a volume with no occupied voxel yields one);
    operations that need points reject it.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    @field_validator("points", mode="before")
    @classmethod
    def _points(cls, v):
        return _as_rows3(v, "points")

    @field_validator("normals", mode="before")
    @classmethod
    def _normals(cls, v):
        if v is None:
            return None
        return _as_rows3(v, "normals")

    @model_validator(mode="after")
    def _normals_match(self):
        if self.normals is not None and self.normals.shape != self.points.shape:
            raise ValueError(
                f"normals shape {self.normals.shape} does not match points {self.points.shape}"
            )
        return self

    @classmethod
    def of(cls, points, normals=None) -> "PointCloud":
        return cls.create(points=points, normals=normals)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def n_points(self) -> int:
        return len(self)

    def subset(self, rows) -> "PointCloud":
        rows = np.asarray(rows, dtype=np.int64)
        normals = None if self.normals is None else self.normals[rows]
        return PointCloud(points=self.points[rows], normals=normals)


class LocalNeighborhood(ArrayModel):
    """
    A center point with its K-1 neighbors, before and after normalization.

    `normalized` holds K rows with the center first at the origin; every
    component lies in [-1, 1]. `scale` is the divisor that was applied.
    """

    center: np.ndarray
    neighbors: np.ndarray
    normalized: np.ndarray
    scale: float

    @field_validator("center", mode="before")
    @classmethod
    def _center(cls, v):
        return require_finite(frozen_array(v, ndim=1), "center")

    @field_validator("neighbors", "normalized", mode="before")
    @classmethod
    def _rows(cls, v):
        return _as_rows3(v, "neighborhood points")

    @property
    def k(self) -> int:
        return int(self.normalized.shape[0])


class TriMesh(ArrayModel):
    """Triangle mesh {V, E, F}. Edges are derived from the faces."""

    vertices: np.ndarray
    faces: np.ndarray

    @field_validator("vertices", mode="before")
    @classmethod
    def _vertices(cls, v):
        return _as_rows3(v, "vertices")

    @field_validator("faces", mode="before")
    @classmethod
    def _faces(cls, v):
        arr = frozen_array(v, dtype=np.int64)
        if arr.size == 0:
            arr = frozen_array(np.zeros((0, 3)), dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"faces must have shape (F, 3), got {arr.shape}")
        return arr

    @model_validator(mode="after")
    def _faces_valid(self):
        if self.faces.size:
            n_v = self.vertices.shape[0]
            if self.faces.min() < 0 or self.faces.max() >= n_v:
                raise ValueError(f"face index out of range for {n_v} vertices")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("faces must reference three distinct vertices")
        return self

    @classmethod
    def of(cls, vertices, faces) -> "TriMesh":
        return cls.create(vertices=vertices, faces=faces)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def edges(self) -> np.ndarray:
        """Undirected edges as (min, max) index pairs, sorted lexicographically."""
        if not self.faces.size:
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)


class VoxelVolume(ArrayModel):
    """Occupancy cube indexed [ix][iy][iz]."""

    occupancy: np.ndarray

    @field_validator("occupancy", mode="before")
    @classmethod
    def _occupancy(cls, v):
        arr = frozen_array(v, dtype=bool)
        if arr.ndim != 3 or len(set(arr.shape)) != 1:
            raise ValueError(f"occupancy must be an N x N x N cube, got {arr.shape}")
        return arr

    @classmethod
    def of(cls, occupancy) -> "VoxelVolume":
        return cls.create(occupancy=occupancy)

    @classmethod
    def empty(cls, size: int) -> "VoxelVolume":
        return cls(occupancy=np.zeros((size, size, size), dtype=bool))

    @property
    def size(self) -> int:
        return int(self.occupancy.shape[0])

    @property
    def n_occupied(self) -> int:
        return int(self.occupancy.sum())
