from __future__ import annotations

from typing import Sequence

import numpy as np

from app.core.errors import ConfigurationError
from app.engine import ops
from app.engine.tensor import DEFAULT_DTYPE, Tensor
from app.networks.layers import Conv2dLayer, Module, ModuleList, check_frame_size

MODEL_KIND = "autoencoder"


class AutoencoderModel(Module):
    """
    Spatial-only inpainting network for non-sequential frames.

    Encoder: stride-2 3x3 convs through `widths` (default 16, 32, 64), so the
    bottleneck is widths[-1] x H/8 x W/8. Decoder mirrors it with
    nearest-neighbour upsampling + conv, then a 3-channel sigmoid conv.
    """

    def __init__(self, widths: Sequence[int], frame_size: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        factor = 2 ** len(widths)
        if frame_size % factor != 0:
            raise ConfigurationError(f"frame size {frame_size} is not divisible by {factor}")
        self.frame_size = frame_size
        self.encoder = ModuleList()
        prev = 3
        for width in widths:
            self.encoder.append(Conv2dLayer(prev, width, 3, rng, stride=2, padding=1, activation="relu", dtype=dtype))
            prev = width
        self.decoder = ModuleList()
        for width in list(widths[-2::-1]) + [widths[0]]:
            self.decoder.append(Conv2dLayer(prev, width, 3, rng, activation="relu", dtype=dtype))
            prev = width
        self.final = Conv2dLayer(prev, 3, 3, rng, activation="sigmoid", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        check_frame_size("autoencoder_reconstruct", x, self.frame_size)
        h = x
        for layer in self.encoder:
            h = layer(h)
        for layer in self.decoder:
            h = layer(ops.upsample_nearest(h, 2))
        return self.final(h)
