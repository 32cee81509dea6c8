"""Reusable assemblies: residual blocks and encoder, UNet generator, PatchGAN discriminator."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from app.core.errors import ConfigurationError, DimensionError
from app.engine import ops
from app.engine.tensor import DEFAULT_DTYPE, Tensor
from app.networks.layers import Conv2dLayer, Dense, Module, ModuleList, check_frame_size


class ResidualBlock(Module):
    """
    relu(conv2(relu(conv1(x))) + shortcut(x)), both convs 3x3 "same".
    The shortcut is a 1x1 projection when channels or stride change,
    otherwise the identity.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, stride: int = 1,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        self.conv1 = Conv2dLayer(in_channels, out_channels, 3, rng, stride=stride, padding=1, activation="relu",
                                 dtype=dtype)
        self.conv2 = Conv2dLayer(out_channels, out_channels, 3, rng, padding=1, dtype=dtype)
        self.projection: Optional[Conv2dLayer] = None
        if in_channels != out_channels or stride != 1:
            self.projection = Conv2dLayer(in_channels, out_channels, 1, rng, stride=stride, padding=0, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        shortcut = x if self.projection is None else self.projection(x)
        return ops.relu(ops.add(self.conv2(self.conv1(x)), shortcut))


class ResidualEncoder(Module):
    """
    Stem conv, residual blocks (the first keeps resolution, the rest halve it),
    global average pooling and a dense head.

    head="sigmoid" ends in one sigmoid unit (occlusion detector);
    head="embedding" ends in a linear out_features-dimensional embedding.
    No batch-coupled layers, so each sample's output is independent of its batch.
    """

    def __init__(self, widths: Sequence[int], input_size: int, head: str, rng: np.random.Generator,
                 out_features: int = 1, dtype=DEFAULT_DTYPE):
        super().__init__()
        if not widths:
            raise ConfigurationError("residual encoder needs at least one block width")
        if head not in ("sigmoid", "embedding"):
            raise ConfigurationError(f"unknown encoder head '{head}'")
        self.input_size = input_size
        self.head_kind = head
        self.stem = Conv2dLayer(3, widths[0], 3, rng, activation="relu", dtype=dtype)
        self.blocks = ModuleList()
        prev = widths[0]
        for i, width in enumerate(widths):
            self.blocks.append(ResidualBlock(prev, width, rng, stride=1 if i == 0 else 2, dtype=dtype))
            prev = width
        self.head = Dense(prev, 1 if head == "sigmoid" else out_features, rng,
                          activation="sigmoid" if head == "sigmoid" else None, dtype=dtype)

    def features(self, x: Tensor) -> Tensor:
        check_frame_size("residual_encoder", x, self.input_size)
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        return ops.global_avg_pool(h)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))


class UNetGenerator(Module):
    """
    Encoder of stride-2 convs doubling channels, decoder of nearest-neighbour
    upsampling + conv halving channels, with skip concatenation at every
    resolution. Ends in a 3-channel sigmoid conv.
    """

    def __init__(self, depth: int, base_channels: int, frame_size: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if depth < 1:
            raise ConfigurationError(f"UNet depth must be >= 1, got {depth}")
        if frame_size % (2 ** depth) != 0:
            raise ConfigurationError(f"frame size {frame_size} is not divisible by 2**{depth}")
        self.depth = depth
        self.frame_size = frame_size
        widths = [base_channels * 2 ** i for i in range(depth + 1)]
        self.stem = Conv2dLayer(3, widths[0], 3, rng, activation="relu", dtype=dtype)
        self.down = ModuleList(
            Conv2dLayer(widths[i], widths[i + 1], 3, rng, stride=2, padding=1, activation="relu", dtype=dtype)
            for i in range(depth)
        )
        # up[i] maps level i+1 back to level i after concatenating the level-i skip
        self.up = ModuleList(
            Conv2dLayer(widths[i + 1] + widths[i], widths[i], 3, rng, activation="relu", dtype=dtype)
            for i in range(depth)
        )
        self.final = Conv2dLayer(widths[0], 3, 3, rng, activation="sigmoid", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        check_frame_size("unet_forward", x, self.frame_size)
        skips = [self.stem(x)]
        for layer in self.down:
            skips.append(layer(skips[-1]))
        h = skips[-1]
        for level in reversed(range(self.depth)):
            h = ops.upsample_nearest(h, 2)
            h = self.up[level](ops.concat([h, skips[level]], axis=1))
        return self.final(h)


class PatchGanDiscriminator(Module):
    """
    Conditional patch discriminator: the candidate frame and its condition are
    concatenated on the channel axis, passed through stride-2 4x4 convs with
    leaky ReLU, and mapped to a 1-channel sigmoid patch grid.
    """

    def __init__(self, num_layers: int, base_channels: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        if num_layers < 1:
            raise ConfigurationError(f"discriminator needs >= 1 layer, got {num_layers}")
        self.layers = ModuleList()
        prev = 6
        for i in range(num_layers):
            width = base_channels * 2 ** i
            self.layers.append(Conv2dLayer(prev, width, 4, rng, stride=2, padding=1, activation="leaky_relu",
                                           dtype=dtype))
            prev = width
        self.final = Conv2dLayer(prev, 1, 3, rng, activation="sigmoid", dtype=dtype)

    def forward(self, frame: Tensor, condition: Tensor) -> Tensor:
        if frame.shape != condition.shape:
            raise DimensionError("patchgan_forward", "condition", frame.shape, condition.shape)
        h = ops.concat([frame, condition], axis=1)
        for layer in self.layers:
            h = layer(h)
        return self.final(h)
