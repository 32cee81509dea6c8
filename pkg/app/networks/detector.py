from __future__ import annotations

from typing import Sequence

import numpy as np

from app.core.errors import ConfigurationError
from app.engine.tensor import DEFAULT_DTYPE, Tensor
from app.networks.blocks import ResidualEncoder
from app.networks.layers import Module

MODEL_KIND = "detector"

DESK_WIDTHS = (16, 32, 64, 128)


class DetectorModel(Module):
    """Residual encoder with a single sigmoid unit: p(occluded) per frame."""

    def __init__(self, frame_size: int, rng: np.random.Generator, widths: Sequence[int] = DESK_WIDTHS,
                 threshold: float = 0.5, dtype=DEFAULT_DTYPE):
        super().__init__()
        if not 0.0 < threshold < 1.0:
            raise ConfigurationError(f"decision threshold must lie in (0, 1), got {threshold}")
        self.frame_size = frame_size
        self.threshold = float(threshold)
        self.encoder = ResidualEncoder(widths, frame_size, "sigmoid", rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        """(B, 3, H, W) -> (B, 1) probabilities."""
        return self.encoder(x)
