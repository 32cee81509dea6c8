from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from app.core.errors import OccReidError
from app.engine.tensor import Tensor, zero_grads

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter Adam moments and hyperparameters."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, learning_rate: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=np.zeros_like(param.data),
            second_moment=np.zeros_like(param.data),
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param: Tensor, state: AdamState) -> None:
    """
    One bias-corrected Adam update, in place on param.data and state.
    The gradient buffer is left untouched; callers zero it.
    """
    if param.grad is None:
        raise OccReidError(f"adam_step: parameter '{param.name}' has no gradient")
    if state.first_moment.shape != param.shape:
        raise OccReidError(f"adam_step: state shape {state.first_moment.shape} != parameter shape {param.shape}")
    g = param.grad
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * g
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * g * g
    m_hat = state.first_moment / (1.0 - b1 ** t)
    v_hat = state.second_moment / (1.0 - b2 ** t)
    update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    param.data -= update.astype(param.dtype)


class Adam:
    """
    Adam over a fixed, named parameter set. Iteration order is the
    registration order, so updates are deterministic.
    """

    def __init__(self, named_params: Iterable[Tuple[str, Tensor]], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params: Dict[str, Tensor] = dict(named_params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.states: Dict[str, AdamState] = {
            name: AdamState.for_param(p, learning_rate, beta1, beta2, epsilon) for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                # disconnected from this loss: zero gradient, moments still decay
                p.grad = np.zeros_like(p.data)
            adam_step(p, self.states[name])

    # ----- checkpoint support -----

    def state_tables(self) -> Tuple[Dict[str, np.ndarray], Dict[str, object]]:
        tensors = {}
        for name, st in self.states.items():
            tensors[f"m/{name}"] = st.first_moment
            tensors[f"v/{name}"] = st.second_moment
        scalars = {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step_counts": {name: st.step_count for name, st in self.states.items()},
        }
        return tensors, scalars

    def load_state_tables(self, tensors: Dict[str, np.ndarray], scalars: Dict[str, object]) -> None:
        counts = scalars["step_counts"]
        for name, st in self.states.items():
            m, v = tensors[f"m/{name}"], tensors[f"v/{name}"]
            if m.shape != st.first_moment.shape:
                raise OccReidError(f"optimizer state for '{name}' has shape {m.shape}, expected {st.first_moment.shape}")
            st.first_moment = m.astype(st.first_moment.dtype)
            st.second_moment = v.astype(st.second_moment.dtype)
            st.step_count = int(counts[name])
        logger.debug("Restored Adam state for %d parameters", len(self.states))
