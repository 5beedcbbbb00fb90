from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z_LOSS_COEFFICIENT = 1e-4


@dataclass(frozen=True)
class LossResult:
    cross_entropy: float
    z_loss: float
    tokens_trained: int

    @property
    def total(self) -> float:
        return self.cross_entropy + self.z_loss


def _log_normalizer(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))[..., 0]


def _check_targets(logits, targets):
    v = logits.shape[-1]
    t = np.asarray(targets)
    if t.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {t.shape} does not match logits {logits.shape[:-1]}")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise ValueError(f"target id out of vocab range [0, {v})")
    return t


def token_logprobs(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """log p(target) at every position."""
    t = _check_targets(logits, targets)
    picked = np.take_along_axis(logits, t[..., None], axis=-1)[..., 0]
    return picked - _log_normalizer(logits)


def _masked_mean(x: np.ndarray, mask: np.ndarray) -> float:
    # shifted by the first value: exact when all entries are equal
    v = x[mask]
    return float(v[0] + np.sum(v - v[0]) / v.size)


def loss_and_zloss(logits, targets, loss_mask, z_coefficient: float = Z_LOSS_COEFFICIENT) -> LossResult:
    """Masked mean cross-entropy and ``z_coefficient * mean(log(Z)^2)``."""
    if z_coefficient < 0:
        raise ValueError("z_coefficient must be >= 0")
    t = _check_targets(logits, targets)
    mask = np.asarray(loss_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return LossResult(0.0, 0.0, 0)
    log_z = _log_normalizer(logits)
    picked = np.take_along_axis(logits, t[..., None], axis=-1)[..., 0]
    ce = _masked_mean(log_z - picked, mask)
    z = float(z_coefficient * _masked_mean(log_z**2, mask))
    return LossResult(ce, z, n)


def loss_and_zloss_backward(logits, targets, loss_mask, z_coefficient: float = Z_LOSS_COEFFICIENT):
    """d(cross_entropy + z_loss) / d logits."""
    t = _check_targets(logits, targets)
    mask = np.asarray(loss_mask, dtype=bool)
    n = int(mask.sum())
    grad = np.zeros_like(logits)
    if n == 0:
        return grad
    log_z = _log_normalizer(logits)
    probs = np.exp(logits - log_z[..., None])
    w = mask.astype(logits.dtype) / logits.dtype.type(n)
    coef = (1.0 + 2.0 * z_coefficient * log_z) * w
    grad = probs * coef[..., None]
    np.put_along_axis(
        grad, t[..., None], np.take_along_axis(grad, t[..., None], axis=-1) - w[..., None], axis=-1
    )
    return grad
