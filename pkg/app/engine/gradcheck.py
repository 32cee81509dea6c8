"""Finite-difference gradient checking, run in double precision."""
from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from app.engine.tensor import Tensor, zero_grads


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar fn() with respect to every entry of param."""
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4) -> Dict[int, float]:
    """
    Compare backward() against central differences.

    All params must be float64 tensors with requires_grad set. Returns the
    relative error per parameter index.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("gradcheck needs float64 parameters")
    zero_grads(params)
    fn().backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)
    return {i: relative_error(a, numerical_gradient(fn, p, h)) for i, (p, a) in enumerate(zip(params, analytic))}
