from app.engine.tensor import Tensor, as_tensor, is_grad_enabled, no_grad, zero_grads
from app.engine.optim import Adam, AdamState, adam_step
from app.engine.losses import bce_loss, contrastive_loss, l1_loss

__all__ = [
    "Tensor",
    "as_tensor",
    "is_grad_enabled",
    "no_grad",
    "zero_grads",
    "Adam",
    "AdamState",
    "adam_step",
    "bce_loss",
    "contrastive_loss",
    "l1_loss",
]
