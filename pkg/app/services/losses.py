"""Pretext losses. Each *_with_grad variant also returns d loss / d prediction."""

import numpy as np

from services.errors import InvalidArgumentError
from services.geometry import chamfer_distance, chamfer_with_grad


def loss_reconstruction(pred, gt) -> float:
    return chamfer_distance(pred, gt)


def loss_reconstruction_with_grad(pred, gt) -> tuple[float, np.ndarray]:
    return chamfer_with_grad(pred, gt)


def _check_normals(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise InvalidArgumentError(f"normal arrays must both be (N, 3): {pred.shape}, {gt.shape}")
    if pred.shape[0] == 0:
        raise InvalidArgumentError("no normals to compare")


def cosine_similarity(pred, gt) -> np.ndarray:
    """Row-wise dot products of unit normals."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_normals(pred, gt)
    return (pred * gt).sum(axis=1)


def loss_normal(pred, gt, sign_invariant: bool = False) -> float:
    """Mean of 1 - cos over rows; 1 - |cos| when the normal sign is irrelevant."""
    cos = cosine_similarity(pred, gt)
    if sign_invariant:
        cos = np.abs(cos)
    return float(np.mean(1.0 - cos))


def loss_normal_with_grad(pred, gt, sign_invariant: bool = False) -> tuple[float, np.ndarray]:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    cos = cosine_similarity(pred, gt)
    n = pred.shape[0]
    if sign_invariant:
        sign = np.where(cos < 0, -1.0, 1.0)
        return float(np.mean(1.0 - np.abs(cos))), -sign[:, None] * gt / n
    return float(np.mean(1.0 - cos)), -gt / n


def nll_with_grad(log_probs, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of one label and its gradient on the log-probabilities."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if not 0 <= label < log_probs.shape[-1]:
        raise InvalidArgumentError(f"label {label} outside [0, {log_probs.shape[-1]})")
    grad = np.zeros_like(log_probs)
    grad[label] = -1.0
    return float(-log_probs[label]), grad


def batch_nll_with_grad(log_probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL over a (B, classes) batch."""
    b = log_probs.shape[0]
    grad = np.zeros_like(log_probs)
    grad[np.arange(b), labels] = -1.0 / b
    return float(-log_probs[np.arange(b), labels].mean()), grad
