"""
Small MLP heads used by the pretext tasks and the linear probes.

Inputs are (rows, F) or batched (B, rows, F). Layers act row-wise; a
max-pool over rows, when configured, keeps the winning row per feature so
the backward pass can route gradients to it alone.
"""

import logging
from typing import Optional

import numpy as np

from config import settings
from models.training import HeadTape, LayerParams, MLPParams, MLPTape
from services.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

_DEFAULT_NORMAL = np.array([0.0, 0.0, 1.0])


def init_mlp(
    widths: list[int],
    activations: list[str],
    pool_after: Optional[int],
    seed: int,
) -> MLPParams:
    """
    Kaiming-uniform weights scaled by fan-in, zero biases. ReLU layers use
    bound sqrt(6 / fan_in), identity layers sqrt(3 / fan_in).
    """
    if len(widths) < 2 or len(activations) != len(widths) - 1:
        raise InvalidArgumentError("need n+1 widths and n activations")
    if min(widths) < 1:
        raise InvalidArgumentError(f"layer widths must be positive: {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(widths, widths[1:], activations):
        bound = np.sqrt((6.0 if act == "relu" else 3.0) / fan_in)
        layers.append(
            LayerParams(
                weight=rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                bias=np.zeros(fan_out),
                activation=act,
            )
        )
    return MLPParams(layers=layers, pool_after=pool_after)


def decoder_params(channels: int, n_out: int, seed: int = 0) -> MLPParams:
    """Point-wise C+3 -> 64 -> 128 -> 256, max over rows, then 256 -> 512 -> 3 n_out."""
    return init_mlp(
        [channels + 3, 64, 128, 256, 512, 3 * n_out],
        ["relu", "relu", "relu", "relu", "identity"],
        pool_after=3,
        seed=seed,
    )


def normal_head_params(channels: int, seed: int = 0) -> MLPParams:
    """Point-wise C+3 -> 64 -> 64 -> 3."""
    return init_mlp([channels + 3, 64, 64, 3], ["relu", "relu", "identity"], None, seed)


def classifier_params(channels: int, n_classes: int, seed: int = 0) -> MLPParams:
    """Point-wise C+3 -> 64 -> 128 -> 256, max over rows, then 256 -> 128 -> classes."""
    if n_classes < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {n_classes}")
    return init_mlp(
        [channels + 3, 64, 128, 256, 128, n_classes],
        ["relu", "relu", "relu", "relu", "identity"],
        pool_after=3,
        seed=seed,
    )


def _pool(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    argmax = h.argmax(axis=1)  # lowest row on ties
    return np.take_along_axis(h, argmax[:, None, :], axis=1), argmax


def _unpool(dh: np.ndarray, argmax: np.ndarray, rows: int) -> np.ndarray:
    full = np.zeros((dh.shape[0], rows, dh.shape[2]))
    np.put_along_axis(full, argmax[:, None, :], dh, axis=1)
    return full


def mlp_forward(
    params: MLPParams, x: np.ndarray, version: int = 0
) -> tuple[np.ndarray, MLPTape]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 3
    if x.ndim not in (2, 3) or x.shape[-1] != params.in_features:
        raise InvalidArgumentError(
            f"expected (..., rows, {params.in_features}) features, got {x.shape}"
        )
    if x.shape[-2] < 1:
        raise InvalidArgumentError("MLP input has no rows")
    h = x if batched else x[None]
    argmax, pool_rows = None, 0
    if params.pool_after == 0:
        pool_rows = h.shape[1]
        h, argmax = _pool(h)

    inputs, pre = [], []
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        z = h @ layer.weight + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        if params.pool_after == i + 1:
            pool_rows = h.shape[1]
            h, argmax = _pool(h)

    tape = MLPTape(
        inputs=inputs,
        pre_activations=pre,
        argmax=argmax,
        pool_rows=pool_rows,
        batched=batched,
        version=version,
    )
    return (h if batched else h[0]), tape


def mlp_backward(
    params: MLPParams, tape: MLPTape, dout: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Parameter gradients by name and the gradient with respect to the input."""
    dh = np.asarray(dout, dtype=np.float64)
    if not tape.batched:
        dh = dh[None]
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        if params.pool_after == i + 1:
            dh = _unpool(dh, tape.argmax, tape.pool_rows)
        z = tape.pre_activations[i]
        dz = dh * (z > 0) if layer.activation == "relu" else dh
        inp = tape.inputs[i]
        grads[f"layers.{i}.weight"] = inp.reshape(-1, layer.fan_in).T @ dz.reshape(
            -1, layer.fan_out
        )
        grads[f"layers.{i}.bias"] = dz.sum(axis=(0, 1))
        dh = dz @ layer.weight.T
    if params.pool_after == 0:
        dh = _unpool(dh, tape.argmax, tape.pool_rows)
    return grads, (dh if tape.batched else dh[0])


def _require_rows(rows) -> None:
    if np.ndim(rows) != 2:
        raise InvalidArgumentError(f"expected a (rows, features) matrix, got {np.shape(rows)}")


def recon_decoder_forward(params: MLPParams, rows: np.ndarray, version: int = 0):
    """Reconstructed cloud (n_out, 3) from (rows, C+3) features."""
    _require_rows(rows)
    if params.pool_after is None or params.out_features % 3:
        raise InvalidArgumentError("decoder must pool and emit 3 coordinates per point")
    out, mlp = mlp_forward(params, rows, version)
    points = out.reshape(-1, 3)
    return points, HeadTape(kind="decoder", mlp=mlp, output=points, version=version)


def normal_head_forward(params: MLPParams, rows: np.ndarray, version: int = 0):
    """
    Unit normals (rows, 3). Outputs with norm below the normalization
    epsilon become (0, 0, 1) and pass no gradient.
    """
    _require_rows(rows)
    if params.pool_after is not None or params.out_features != 3:
        raise InvalidArgumentError("normal head must be point-wise with 3 outputs")
    raw, mlp = mlp_forward(params, rows, version)
    norms = np.linalg.norm(raw, axis=1)
    ok = norms >= settings.normal_eps
    unit = np.where(ok[:, None], raw / np.where(ok, norms, 1.0)[:, None], _DEFAULT_NORMAL)
    tape = HeadTape(kind="normal", mlp=mlp, raw=raw, norms=norms, output=unit, version=version)
    return unit, tape


def classify_head_forward(
    params: MLPParams, rows: np.ndarray, n_classes: Optional[int] = None, version: int = 0
):
    """Log-probabilities over classes; (n_classes,) or (B, n_classes) when batched."""
    if params.pool_after is None:
        raise InvalidArgumentError("classifier must pool over rows")
    if n_classes is not None and params.out_features != n_classes:
        raise InvalidArgumentError(f"head emits {params.out_features} classes, not {n_classes}")
    logits, mlp = mlp_forward(params, rows, version)
    logits = logits[..., 0, :]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return log_probs, HeadTape(kind="classifier", mlp=mlp, output=log_probs, version=version)


def head_backward(
    params: MLPParams, tape: HeadTape, upstream: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Back-propagate d loss / d head output through the head and its MLP."""
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != tape.output.shape:
        raise InvalidArgumentError(f"upstream shape {up.shape} != output {tape.output.shape}")
    if tape.kind == "decoder":
        dout = up.reshape(1, -1)
    elif tape.kind == "normal":
        unit = tape.output
        ok = tape.norms >= settings.normal_eps
        radial = (unit * up).sum(axis=1, keepdims=True)
        safe = np.where(ok, tape.norms, 1.0)[:, None]
        dout = np.where(ok[:, None], (up - unit * radial) / safe, 0.0)
    else:
        probs = np.exp(tape.output)
        dlogits = up - probs * up.sum(axis=-1, keepdims=True)
        dout = dlogits[..., None, :]
    return mlp_backward(params, tape.mlp, dout)
