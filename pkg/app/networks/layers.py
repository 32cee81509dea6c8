"""
Module base class with a stable parameter registry, plus the basic layers.

Parameters are registered in attribute-assignment order and named by their
dotted path ("encoder.blocks.0.conv1.kernel"). Those names are the
checkpoint contract, so renaming an attribute is a format change.
"""
from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from app.core.errors import CheckpointFormatError, DimensionError
from app.engine import ops
from app.engine.tensor import DEFAULT_DTYPE, Tensor, zero_grads


class Module:
    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            value.name = name
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, child in self._modules.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grads(self) -> None:
        zero_grads(self.parameters())

    def param_dtype(self):
        """dtype of the first registered parameter; every layer of a model shares it."""
        return next(self.named_parameters())[1].dtype

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = [n for n in own if n not in state]
        unexpected = [n for n in state if n not in own]
        if missing or unexpected:
            raise CheckpointFormatError(f"parameter table mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = state[name]
            if value.shape != p.shape:
                raise CheckpointFormatError(f"'{name}' has shape {value.shape}, expected {p.shape}")
            p.data[...] = value

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: List[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


def he_normal(shape, fan_in: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Zero-mean normal with variance 2 / fan_in."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def parameter(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True, dtype=values.dtype)


class Conv2dLayer(Module):
    """
    Convolution + optional activation. padding="same" keeps spatial size
    at stride 1 (odd kernels only).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: Union[int, str] = "same", activation: Optional[str] = None,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = ops.same_padding(kernel_size) if padding == "same" else int(padding)
        self.activation = activation
        fan_in = in_channels * kernel_size * kernel_size
        self.kernel = parameter(he_normal((out_channels, in_channels, kernel_size, kernel_size), fan_in, rng, dtype))
        self.bias = parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)
        return ops.activation(y, self.activation)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 activation: Optional[str] = None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.activation = activation
        self.weight = parameter(he_normal((out_features, in_features), in_features, rng, dtype))
        self.bias = parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.activation(ops.linear(x, self.weight, self.bias), self.activation)


def check_frame_size(op: str, x: Tensor, size: int) -> None:
    if x.ndim != 4:
        raise DimensionError(op, "rank", 4, x.ndim)
    if x.shape[1] != 3:
        raise DimensionError(op, "channel", 3, x.shape[1])
    if x.shape[2] != size:
        raise DimensionError(op, "height", size, x.shape[2])
    if x.shape[3] != size:
        raise DimensionError(op, "width", size, x.shape[3])
