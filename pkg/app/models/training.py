from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import settings
from models.geometry import PointCloud

PretextTask = Literal["reconstruction", "normal_estimation", "supervised"]
WeightMode = Literal["train_grid", "freeze_grid"]
Activation = Literal["relu", "identity"]


class LayerParams(BaseModel):
    """One dense layer: y = act(x @ weight + bias), weight shaped (in, out)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = "relu"

    @model_validator(mode="after")
    def _shapes(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"bad layer shapes {self.weight.shape} / {self.bias.shape}")
        return self

    @property
    def fan_in(self) -> int:
        return int(self.weight.shape[0])

    @property
    def fan_out(self) -> int:
        return int(self.weight.shape[1])


class MLPParams(BaseModel):
    """
    Dense layers applied row-wise, with an optional max-pool over rows.

    pool_after = j pools after the first j layers (0 pools the inputs,
    None never pools). Arrays are updated in place by the optimizer.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    layers: list[LayerParams]
    pool_after: Optional[int] = None

    @model_validator(mode="after")
    def _chain(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ValueError(f"layer widths do not chain: {a.fan_out} -> {b.fan_in}")
        if self.pool_after is not None and not 0 <= self.pool_after <= len(self.layers):
            raise ValueError(f"pool_after {self.pool_after} outside [0, {len(self.layers)}]")
        for layer in self.layers:
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError("MLP parameters must be finite")
        return self

    @property
    def in_features(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_features(self) -> int:
        return self.layers[-1].fan_out

    def named(self) -> dict[str, np.ndarray]:
        """Parameter arrays by name; the arrays are shared, not copied."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layers.{i}.weight"] = layer.weight
            out[f"layers.{i}.bias"] = layer.bias
        return out

    def copy(self) -> "MLPParams":
        return MLPParams(
            layers=[
                LayerParams(weight=l.weight.copy(), bias=l.bias.copy(), activation=l.activation)
                for l in self.layers
            ],
            pool_after=self.pool_after,
        )


class MLPTape(BaseModel):
    """Forward records needed to differentiate an MLP."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    argmax: Optional[np.ndarray] = None
    pool_rows: int = 0
    batched: bool = False
    version: int = 0


class HeadTape(BaseModel):
    """MLP tape plus what the head did after the MLP (normalization / softmax)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: Literal["decoder", "normal", "classifier"]
    mlp: MLPTape
    raw: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None
    version: int = 0


class AdamState(BaseModel):
    """Adam moments shaped like every trainable array, plus the step counter."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = Field(default=0, ge=0)
    beta1: float = settings.adam_beta1
    beta2: float = settings.adam_beta2
    eps: float = settings.adam_eps


class PretextConfig(BaseModel):
    """Settings of one pretext run. Defaults follow the full-scale schedule."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    task: PretextTask = "reconstruction"
    n_s: int = settings.n_s
    n_out: int = settings.n_out
    epochs: int = settings.epochs
    base_lr: float = settings.base_lr
    decay_factor: float = settings.decay_factor
    decay_every_epochs: int = settings.decay_every_epochs
    k: Optional[int] = None
    seed: int = settings.seed
    weight_mode: WeightMode = "train_grid"
    batch_size: int = settings.batch_size
    eval_fraction: float = settings.eval_fraction
    n_points: Optional[int] = None
    n_classes: Optional[int] = None
    sign_invariant_normals: bool = False

    @field_validator("n_s", "n_out", "epochs", "decay_every_epochs", "batch_size")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("k", "n_points", "n_classes")
    @classmethod
    def _positive_or_none(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("must be at least 1 when given")
        return v

    @field_validator("decay_factor")
    @classmethod
    def _decay(cls, v: float) -> float:
        if not 0 < v <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        return v

    @field_validator("base_lr")
    @classmethod
    def _lr(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("base_lr must be positive")
        return v

    @field_validator("eval_fraction")
    @classmethod
    def _fraction(cls, v: float) -> float:
        if not 0 <= v < 1:
            raise ValueError("eval_fraction must be in [0, 1)")
        return v

    @field_validator("seed")
    @classmethod
    def _seed(cls, v: int) -> int:
        if v < 0:
            raise ValueError("seed must be non-negative")
        return v


class TrainingSample(BaseModel):
    """One shape of a pretext dataset. Normals travel inside the cloud."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cloud: PointCloud
    label: Optional[int] = None


class EpochRecord(BaseModel):
    epoch: int
    lr: float
    train_loss: float
    eval_loss: float


class TrainReport(BaseModel):
    task: PretextTask
    epochs: list[EpochRecord]
    initial_eval_loss: float
    final_eval_metric: float
    metric_name: str
    wall_clock_seconds: float
    config: PretextConfig
    seed: int
    eval_indices: list[int] = []

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def eval_losses(self) -> list[float]:
        return [e.eval_loss for e in self.epochs]
