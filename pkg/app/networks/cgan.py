from __future__ import annotations

import numpy as np

from app.core.errors import ConfigurationError
from app.engine.tensor import DEFAULT_DTYPE
from app.networks.blocks import PatchGanDiscriminator, UNetGenerator
from app.networks.layers import Module

MODEL_KIND = "cgan"


class CganModel(Module):
    """UNet generator G, PatchGAN discriminator D and the L1 weight lambda."""

    def __init__(self, frame_size: int, rng: np.random.Generator, unet_depth: int = 3, unet_base: int = 16,
                 disc_layers: int = 3, disc_base: int = 16, lambda_l1: float = 100.0, dtype=DEFAULT_DTYPE):
        super().__init__()
        if lambda_l1 <= 0:
            raise ConfigurationError(f"lambda_l1 must be positive, got {lambda_l1}")
        self.frame_size = frame_size
        self.lambda_l1 = float(lambda_l1)
        self.generator = UNetGenerator(unet_depth, unet_base, frame_size, rng, dtype=dtype)
        self.discriminator = PatchGanDiscriminator(disc_layers, disc_base, rng, dtype=dtype)
