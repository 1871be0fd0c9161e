import logging

import numpy as np

from models.training import AdamState, PretextConfig
from services.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p) for name, p in params.items()},
        v={name: np.zeros_like(p) for name, p in params.items()},
    )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place. Params without a gradient are left alone."""
    unknown = set(grads) - set(params)
    if unknown:
        raise InvalidArgumentError(f"gradients for unknown parameters: {sorted(unknown)}")
    for name, g in grads.items():
        p_shape = params[name].shape
        m_shape = state.m[name].shape if name in state.m else None
        if np.shape(g) != p_shape or m_shape != p_shape:
            raise InvalidArgumentError(
                f"shape mismatch for {name}: param {p_shape}, grad {np.shape(g)}, moment {m_shape}"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def lr_at(epoch: int, cfg: PretextConfig) -> float:
    """Step decay: base_lr * decay_factor ** floor(epoch / decay_every_epochs)."""
    return cfg.base_lr * cfg.decay_factor ** (epoch // cfg.decay_every_epochs)
