from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from models.base import ArrayModel, frozen_array, require_finite

# Per-element shape embeddings, an (N, C) float64 array with rows in element order.
EmbeddingMatrix = np.ndarray

InitScheme = Literal["uniform", "normal"]


class FieldGrid(ArrayModel):
    """
    The learnable R x R x R x C field over the cube [-1, 1]^3.

    Node i on an axis sits at -1 + 2 i / (R - 1) (align-corners). Values are
    indexed [ix][iy][iz][c] and always held in float64.
    """

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        arr = frozen_array(v, ndim=4)
        r = arr.shape[0]
        if arr.shape[1] != r or arr.shape[2] != r:
            raise ValueError(f"grid must be R x R x R x C, got {arr.shape}")
        if r < 2:
            raise ValueError(f"resolution must be at least 2, got {r}")
        if arr.shape[3] < 1:
            raise ValueError("grid needs at least one channel")
        return require_finite(arr, "grid values")

    @classmethod
    def of(cls, values) -> "FieldGrid":
        return cls.create(values=values)

    @property
    def resolution(self) -> int:
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        return int(self.values.shape[3])

    @property
    def n_parameters(self) -> int:
        return int(self.values.size)

    @property
    def flat(self) -> np.ndarray:
        """(R^3, C) view with node index ix * R^2 + iy * R + iz."""
        return self.values.reshape(-1, self.channels)


class InterpTape(ArrayModel):
    """
    Records of a batched field lookup, kept for the backward pass.

    corners/weights are (B, K, 8): flat node indices and trilinear weights of
    each of the K sampled points in B neighborhoods. argmax is (B, C): the
    row that won the max-pool per channel.
    """

    resolution: int
    channels: int
    corners: np.ndarray
    weights: np.ndarray
    argmax: Optional[np.ndarray] = None
    version: int = 0

    @property
    def n_neighborhoods(self) -> int:
        return int(self.corners.shape[0])


class ComplexityReport(BaseModel):
    """Operation counts for embedding one cloud."""

    model_config = ConfigDict(frozen=True)

    n_points: int
    k: int
    resolution: int
    channels: int
    knn_distance_evaluations: int
    interpolation_reads: int
    parameters: int
