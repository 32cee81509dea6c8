from __future__ import annotations

from typing import Sequence

import numpy as np

from app.core.errors import ConfigurationError
from app.engine import ops
from app.engine.tensor import DEFAULT_DTYPE, Tensor
from app.networks.blocks import ResidualEncoder
from app.networks.layers import Dense, Module

MODEL_KIND = "siamese"

SAME_CLASS = 1


class SiameseModel(Module):
    """
    One residual encoder shared by both branches, and a difference head
    |e_a - e_b| -> dense(d -> hidden, ReLU) -> dense(hidden -> 2) -> softmax.
    D_w is the softmax probability of the "same identity" class.
    """

    def __init__(self, widths: Sequence[int], frame_size: int, rng: np.random.Generator, embedding_dim: int = 64,
                 head_hidden: int = 32, margin: float = 1.0, dtype=DEFAULT_DTYPE):
        super().__init__()
        if margin <= 0:
            raise ConfigurationError(f"contrastive margin must be positive, got {margin}")
        self.frame_size = frame_size
        self.embedding_dim = embedding_dim
        self.margin = float(margin)
        self.encoder = ResidualEncoder(widths, frame_size, "embedding", rng, out_features=embedding_dim, dtype=dtype)
        self.hidden = Dense(embedding_dim, head_hidden, rng, activation="relu", dtype=dtype)
        self.classifier = Dense(head_hidden, 2, rng, dtype=dtype)

    def embed(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def head(self, e_a: Tensor, e_b: Tensor) -> Tensor:
        probs = ops.softmax(self.classifier(self.hidden(ops.abs_diff(e_a, e_b))))
        return ops.select_column(probs, SAME_CLASS)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        return self.head(self.embed(a), self.embed(b))
