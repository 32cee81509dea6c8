"""
Loss functions shared by the five models.

The loss value is accumulated in double precision and returned in the
prediction's dtype, so clamped-log terms stay accurate in single precision.
"""
from __future__ import annotations

from typing import Union

import numpy as np

from app.core.errors import DimensionError, ValidationFailure
from app.engine.tensor import Tensor

BCE_CLAMP = 1e-7

ArrayLike = Union[Tensor, np.ndarray, float, int]


def _target_array(target: ArrayLike, like: Tensor, op: str) -> np.ndarray:
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    y = np.broadcast_to(y, like.shape) if y.ndim == 0 else y
    if y.shape != like.shape:
        raise DimensionError(op, "target", like.shape, y.shape)
    return y.astype(np.float64)


def bce_loss(pred: Tensor, target: ArrayLike, eps: float = BCE_CLAMP) -> Tensor:
    """
    Mean binary cross-entropy, -(1/N) sum[y log p + (1 - y) log(1 - p)].

    Targets may be hard labels or soft intensities in [0, 1]. Predictions are
    clamped to [eps, 1 - eps] before the log; the gradient is zero where the
    clamp is active.
    """
    y = _target_array(target, pred, "bce_loss")
    p_raw = pred.data.astype(np.float64)
    p = np.clip(p_raw, eps, 1.0 - eps)
    n = pred.size
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (p_raw >= eps) & (p_raw <= 1.0 - eps)

    def backward(g):
        grad = -(y / p - (1.0 - y) / (1.0 - p)) / n
        return ((float(g) * grad * inside).astype(pred.dtype),)

    return Tensor._from_op("bce_loss", np.asarray(value, dtype=pred.dtype), (pred,), backward)


def l1_loss(a: Tensor, b: ArrayLike) -> Tensor:
    """Mean absolute difference; subgradient 0 at ties."""
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b), dtype=a.dtype)
    if a.shape != b.shape:
        raise DimensionError("l1_loss", "shape", a.shape, b.shape)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    sign = np.sign(diff)
    n = a.size
    value = np.abs(diff).mean()

    def backward(g):
        grad = float(g) * sign / n
        return grad.astype(a.dtype), (-grad).astype(b.dtype)

    return Tensor._from_op("l1_loss", np.asarray(value, dtype=a.dtype), (a, b), backward)


def contrastive_loss(d_w: Union[Tensor, float], y: ArrayLike, margin: float = 1.0) -> Tensor:
    """
    Contrastive loss on similarity scores, averaged over the batch:

        (1 - Y) * 1/2 * D_w^2 + Y * 1/2 * max(0, m - D_w)^2

    Y = 1 marks a same-identity pair; a high D_w means "same". Python floats
    are evaluated in double precision.
    """
    if margin <= 0:
        raise ValidationFailure(f"contrastive margin must be positive, got {margin}")
    if not isinstance(d_w, Tensor):
        d_w = Tensor(np.asarray(d_w, dtype=np.float64), dtype=np.float64)
    labels = _target_array(y, d_w, "contrastive_loss")
    if np.any((labels != 0) & (labels != 1)):
        raise ValidationFailure("contrastive_loss: labels must be 0 or 1")
    d = d_w.data.astype(np.float64)
    hinge = np.maximum(0.0, margin - d)
    n = d_w.size
    value = np.mean((1.0 - labels) * 0.5 * d * d + labels * 0.5 * hinge * hinge)

    def backward(g):
        grad = float(g) * ((1.0 - labels) * d - labels * hinge) / n
        return (grad.astype(d_w.dtype),)

    return Tensor._from_op("contrastive_loss", np.asarray(value, dtype=d_w.dtype), (d_w,), backward)
