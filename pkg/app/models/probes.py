from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import settings
from models.base import ArrayModel, frozen_array
from models.geometry import PointCloud

Axis = Literal["x", "y", "z"]
ProbeMode = Literal["max_fc", "pointwise_fc_max_fc", "flatten_fc"]

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
SHAPE_CLASSES = ("sphere", "cube", "cylinder")


class SemiEllipsoidSpec(BaseModel):
    """Upper half of x^2/a^2 + y^2/b^2 + z^2/c^2 = 1, sampled on a (theta, phi) grid."""

    model_config = ConfigDict(frozen=True)

    a: float = Field(gt=0)
    b: float = Field(gt=0)
    c: float = Field(gt=0)
    n_theta: int = Field(default=settings.ellipsoid_n_theta, ge=2)
    n_phi: int = Field(default=settings.ellipsoid_n_phi, ge=1)


class ResponseMatrix(ArrayModel):
    """Peak embeddings, one row per generated shape in sweep order."""

    axis: Axis
    radii: np.ndarray
    values: np.ndarray

    @field_validator("radii", mode="before")
    @classmethod
    def _radii(cls, v):
        return frozen_array(v, ndim=1)

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v):
        return frozen_array(v, ndim=2)

    @property
    def n_shapes(self) -> int:
        return int(self.values.shape[0])


class SyntheticShape(BaseModel):
    """A generated shape: cloud with analytic normals and its class id."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cloud: PointCloud
    label: int = Field(ge=0, lt=len(SHAPE_CLASSES))

    @field_validator("cloud")
    @classmethod
    def _has_normals(cls, v: PointCloud) -> PointCloud:
        if v.normals is None:
            raise ValueError("synthetic shapes carry normals")
        return v

    @property
    def normals(self) -> np.ndarray:
        return self.cloud.normals

    @property
    def class_name(self) -> str:
        return SHAPE_CLASSES[self.label]


class ProbeResult(BaseModel):
    """Accuracy of one linear probe run."""

    mode: ProbeMode
    accuracy: float
    n_train: int
    n_test: int
    features: str = "field"


class SweepPoint(BaseModel):
    """Outcome of one pretraining run in a single-parameter sweep."""

    override: dict[str, int]
    metric_name: str
    final_metric: float
    final_eval_loss: float


class LinearProbeReport(BaseModel):
    """Field features scored against raw coordinates under the same probe."""

    field: ProbeResult
    raw: ProbeResult
    random_grid: bool = False

    @property
    def margin(self) -> float:
        return self.field.accuracy - self.raw.accuracy
