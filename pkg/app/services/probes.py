"""
Analysis tools for a (trained) field: curvature response on semi-ellipsoids,
max-projected weight slices, a linear classification probe over frozen
features and single-parameter pretraining sweeps.
"""

import logging
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from scipy.stats import spearmanr

from config import settings
from models.field import FieldGrid
from models.geometry import PointCloud
from models.probes import (
    AXIS_INDEX,
    Axis,
    ProbeMode,
    ProbeResult,
    ResponseMatrix,
    SemiEllipsoidSpec,
    SweepPoint,
)
from models.training import MLPParams, PretextConfig
from services.adapters import cloud_embeddings
from services.errors import InvalidArgumentError
from services.field_grid import embed_neighborhood, init_grid
from services.geometry import normalize_neighborhood
from services.heads import init_mlp, mlp_backward, mlp_forward
from services.losses import batch_nll_with_grad
from services.optim import adam_init, adam_step
from services.pretrain import train_pretext

logger = logging.getLogger(__name__)

SWEEP_KEYS = ("resolution", "channels", "k", "n_s")


def default_radii() -> np.ndarray:
    """0.1, 0.2, ..., 2.0."""
    return np.round(0.1 * np.arange(1, 21), 10)


def gen_semi_ellipsoid(spec: SemiEllipsoidSpec) -> PointCloud:
    """
    Points on the upper half ellipsoid over theta in [0, pi/2] (both ends
    included) and phi = 2 pi j / n_phi. The peak (0, 0, c) is row 0 and
    appears once; the remaining rows follow theta-major order.
    """
    theta = np.linspace(0.0, np.pi / 2, spec.n_theta)[1:]
    phi = 2.0 * np.pi * np.arange(spec.n_phi) / spec.n_phi
    t, p = np.meshgrid(theta, phi, indexing="ij")
    t, p = t.ravel(), p.ravel()
    ring = np.stack(
        [spec.a * np.sin(t) * np.cos(p), spec.b * np.sin(t) * np.sin(p), spec.c * np.cos(t)],
        axis=1,
    )
    peak = np.array([[0.0, 0.0, spec.c]])
    return PointCloud(points=np.concatenate([peak, ring], axis=0))


def curvature_response(
    grid: FieldGrid,
    axis: Axis,
    radii: Optional[Sequence[float]] = None,
    n_theta: Optional[int] = None,
    n_phi: Optional[int] = None,
) -> ResponseMatrix:
    """
    Embedding of the peak point while one radius sweeps `radii` (0.1 to 2.0
    by default) and the other two stay at 1. The peak's neighborhood is the
    whole surface, normalized like any other neighborhood.
    """
    if axis not in AXIS_INDEX:
        raise InvalidArgumentError(f"axis must be x, y or z, got {axis}")
    radii = default_radii() if radii is None else np.asarray(radii, dtype=np.float64)
    n_theta = settings.ellipsoid_n_theta if n_theta is None else n_theta
    n_phi = settings.ellipsoid_n_phi if n_phi is None else n_phi
    rows = []
    for r in radii:
        abc = [1.0, 1.0, 1.0]
        abc[AXIS_INDEX[axis]] = float(r)
        try:
            spec = SemiEllipsoidSpec(a=abc[0], b=abc[1], c=abc[2], n_theta=n_theta, n_phi=n_phi)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise InvalidArgumentError(f"invalid semi-ellipsoid {where}: {first['msg']}") from e
        pts = gen_semi_ellipsoid(spec).points
        nbhd = normalize_neighborhood(pts[0], pts[1:])
        rows.append(embed_neighborhood(grid, nbhd))
    logger.debug(f"Curvature response along {axis}: {len(rows)} shapes")
    return ResponseMatrix(axis=axis, radii=radii, values=np.stack(rows))


def spearman_report(response: ResponseMatrix) -> np.ndarray:
    """Per-channel Spearman correlation between radius and response; NaN for flat channels."""
    out = np.full(response.values.shape[1], np.nan)
    for c in range(response.values.shape[1]):
        column = response.values[:, c]
        if np.ptp(column) > 0 and np.ptp(response.radii) > 0:
            rho, _ = spearmanr(response.radii, column)
            out[c] = rho
    return out


def weight_slices(grid: FieldGrid, axis: Axis) -> np.ndarray:
    """(C, R, R) max projections of every channel along `axis`."""
    if axis not in AXIS_INDEX:
        raise InvalidArgumentError(f"axis must be x, y or z, got {axis}")
    projected = grid.values.max(axis=AXIS_INDEX[axis])  # (R, R, C)
    return np.moveaxis(projected, -1, 0)


def field_features(
    grid: FieldGrid, clouds: Iterable[PointCloud], k: Optional[int] = None
) -> list[np.ndarray]:
    """Frozen field embeddings of every cloud."""
    return [cloud_embeddings(grid, cloud, k) for cloud in clouds]


def _stack(matrices: list[np.ndarray], mode: ProbeMode) -> np.ndarray:
    widths = {m.shape[1] for m in matrices}
    if len(widths) != 1:
        raise InvalidArgumentError(f"feature widths differ across shapes: {sorted(widths)}")
    n_rows = {m.shape[0] for m in matrices}
    if mode == "flatten_fc":
        if len(n_rows) != 1:
            raise InvalidArgumentError("flatten_fc needs the same row count for every shape")
        return np.stack([m.reshape(1, -1) for m in matrices])
    # Row 0 repeated as padding leaves every max-pool unchanged.
    longest = max(n_rows)
    padded = [
        np.concatenate([m, np.repeat(m[:1], longest - m.shape[0], axis=0)]) for m in matrices
    ]
    return np.stack(padded)


def _probe_head(mode: ProbeMode, width: int, n_classes: int, seed: int) -> MLPParams:
    if mode == "max_fc":
        return init_mlp([width, n_classes], ["identity"], pool_after=0, seed=seed)
    if mode == "pointwise_fc_max_fc":
        return init_mlp(
            [width, width, n_classes], ["identity", "identity"], pool_after=1, seed=seed
        )
    if mode == "flatten_fc":
        return init_mlp([width, n_classes], ["identity"], pool_after=None, seed=seed)
    raise InvalidArgumentError(f"unknown probe mode: {mode}")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def run_linear_probe(
    embeddings_per_shape: Sequence[tuple[np.ndarray, int]],
    mode: ProbeMode,
    seed: int = 0,
    epochs: Optional[int] = None,
    lr: Optional[float] = None,
    features: str = "field",
) -> ProbeResult:
    """
    Train a probe head on frozen per-shape feature matrices and report its
    test accuracy on a seeded 80/20 split.
    """
    if len(embeddings_per_shape) < 2:
        raise InvalidArgumentError("a probe needs at least 2 shapes")
    matrices = [np.asarray(m, dtype=np.float64) for m, _ in embeddings_per_shape]
    if any(m.ndim != 2 or m.shape[0] < 1 for m in matrices):
        raise InvalidArgumentError("each shape needs a non-empty (rows, features) matrix")
    labels = np.array([int(label) for _, label in embeddings_per_shape])
    if labels.min() < 0:
        raise InvalidArgumentError("labels must be non-negative")
    if np.unique(labels).shape[0] < 2:
        raise InvalidArgumentError("a probe needs at least 2 classes")
    n_classes = int(labels.max()) + 1
    epochs = settings.probe_epochs if epochs is None else epochs
    lr = settings.base_lr if lr is None else lr

    x = _stack(matrices, mode)
    n = x.shape[0]
    order = np.random.default_rng([seed, 7]).permutation(n)
    n_train = min(max(int(round(n * settings.probe_train_fraction)), 1), n - 1)
    train, test = order[:n_train], order[n_train:]

    head = _probe_head(mode, x.shape[2], n_classes, seed)
    params = head.named()
    state = adam_init(params)
    batch = settings.probe_batch_size
    for epoch in range(epochs):
        shuffled = np.random.default_rng([seed, 8, epoch]).permutation(train)
        for start in range(0, shuffled.shape[0], batch):
            idx = shuffled[start : start + batch]
            logits, tape = mlp_forward(head, x[idx])
            log_probs = _log_softmax(logits[:, 0, :])
            _, dlogp = batch_nll_with_grad(log_probs, labels[idx])
            probs = np.exp(log_probs)
            dlogits = dlogp - probs * dlogp.sum(axis=-1, keepdims=True)
            grads, _ = mlp_backward(head, tape, dlogits[:, None, :])
            adam_step(state, params, grads, lr)

    logits, _ = mlp_forward(head, x[test])
    predicted = logits[:, 0, :].argmax(axis=1)
    accuracy = float(np.mean(predicted == labels[test]))
    logger.info(f"Linear probe {mode} on {features} features: accuracy {accuracy:.3f}")
    return ProbeResult(
        mode=mode, accuracy=accuracy, n_train=len(train), n_test=len(test), features=features
    )


def linear_probe(
    embeddings_per_shape: Sequence[tuple[np.ndarray, int]],
    mode: ProbeMode,
    seed: int = 0,
    epochs: Optional[int] = None,
) -> float:
    """Test accuracy in [0, 1] of a probe trained on frozen features."""
    return run_linear_probe(embeddings_per_shape, mode, seed=seed, epochs=epochs).accuracy


def hyperparameter_sweep(
    dataset: Sequence,
    base_cfg: PretextConfig,
    overrides: Sequence[dict[str, int]],
    resolution: Optional[int] = None,
    channels: Optional[int] = None,
    seed: int = 0,
) -> list[SweepPoint]:
    """
    Re-run pretraining once per override, each changing one of resolution,
    channels, k or n_s away from the base setting. Grids start from
    init_grid(seed) at the chosen size.
    """
    resolution = settings.resolution if resolution is None else resolution
    channels = settings.channels if channels is None else channels
    points = []
    for override in overrides:
        unknown = set(override) - set(SWEEP_KEYS)
        if unknown:
            raise InvalidArgumentError(f"cannot sweep {sorted(unknown)}; use {SWEEP_KEYS}")
        r = override.get("resolution", resolution)
        c = override.get("channels", channels)
        cfg_update = {key: override[key] for key in ("k", "n_s") if key in override}
        try:
            cfg = PretextConfig(**{**base_cfg.model_dump(), **cfg_update})
        except ValidationError as e:
            raise InvalidArgumentError(f"invalid sweep override {override}: {e}") from e
        _, _, report = train_pretext(dataset, cfg, init_grid(r, c, seed=seed))
        points.append(
            SweepPoint(
                override=dict(override),
                metric_name=report.metric_name,
                final_metric=report.final_eval_metric,
                final_eval_loss=report.epochs[-1].eval_loss,
            )
        )
        logger.info(f"Sweep {override}: {report.metric_name}={report.final_eval_metric:.4f}")
    return points
