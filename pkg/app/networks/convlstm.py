"""
Convolutional LSTM with peephole connections.

    i_t = sigmoid(W_xi * X_t + W_hi * H_{t-1} + W_ci o C_{t-1} + b_i)
    f_t = sigmoid(W_xf * X_t + W_hf * H_{t-1} + W_cf o C_{t-1} + b_f)
    C_t = f_t o C_{t-1} + i_t o tanh(W_xc * X_t + W_hc * H_{t-1} + b_c)
    o_t = sigmoid(W_xo * X_t + W_ho * H_{t-1} + W_co o C_t + b_o)
    H_t = o_t o tanh(C_t)

(* is convolution, o the Hadamard product.) The output-gate peephole reads
the updated cell state C_t.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError, DimensionError
from app.engine import ops
from app.engine.tensor import DEFAULT_DTYPE, Tensor
from app.networks.layers import Conv2dLayer, Module, ModuleList, he_normal, parameter

MODEL_KIND = "convlstm"

GATES = ("i", "f", "c", "o")

# Kernel schedule of the stack: 5x5 first layer, 3x3 for layers 2-8, 1x1 ninth.
TABLE_KERNELS = (5, 3, 3, 3, 3, 3, 3, 3, 1)
FULL_SCALE_WIDTHS = (128, 128, 64, 64, 32, 32, 32, 16, 3)
DESK_WIDTHS = (16, 16, 8, 8, 4, 4, 4, 4, 3)


@dataclass
class ConvLstmState:
    H: Tensor
    C: Tensor

    @classmethod
    def zeros(cls, batch: int, channels: int, size: int, dtype=DEFAULT_DTYPE) -> "ConvLstmState":
        shape = (batch, channels, size, size)
        return cls(H=Tensor(np.zeros(shape, dtype=dtype), dtype=dtype), C=Tensor(np.zeros(shape, dtype=dtype), dtype=dtype))


class ConvLstmCellParams(Module):
    """
    Weights of one Conv-LSTM layer: input kernels W_x*, hidden kernels W_h*,
    peephole maps W_ci, W_cf, W_co shaped (1, Ch, H, W), and gate biases.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int, frame_size: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"Conv-LSTM kernels must be odd for 'same' padding, got {kernel_size}")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        self.frame_size = frame_size
        k = kernel_size
        x_fan, h_fan = in_channels * k * k, hidden_channels * k * k
        for gate in GATES:
            setattr(self, f"W_x{gate}", parameter(he_normal((hidden_channels, in_channels, k, k), x_fan, rng, dtype)))
            setattr(self, f"W_h{gate}", parameter(he_normal((hidden_channels, hidden_channels, k, k), h_fan, rng, dtype)))
        for gate in ("i", "f", "o"):
            setattr(self, f"W_c{gate}", parameter(np.zeros((1, hidden_channels, frame_size, frame_size), dtype=dtype)))
        for gate in GATES:
            setattr(self, f"b_{gate}", parameter(np.zeros(hidden_channels, dtype=dtype)))

    @property
    def padding(self) -> int:
        return ops.same_padding(self.kernel_size)


def conv_lstm_cell_step(params: ConvLstmCellParams, x_t: Tensor, state: ConvLstmState) -> ConvLstmState:
    """Advance one timestep. The four gate convolutions are evaluated as one stacked conv per input."""
    if x_t.ndim != 4 or x_t.shape[1] != params.in_channels:
        raise DimensionError("conv_lstm_cell_step", "channel", params.in_channels, x_t.shape[1] if x_t.ndim == 4 else x_t.shape)
    if state.H.shape != state.C.shape:
        raise DimensionError("conv_lstm_cell_step", "state", state.H.shape, state.C.shape)
    if state.H.shape[1] != params.hidden_channels:
        raise DimensionError("conv_lstm_cell_step", "channel", params.hidden_channels, state.H.shape[1])
    if x_t.shape[0] != state.H.shape[0]:
        raise DimensionError("conv_lstm_cell_step", "batch", state.H.shape[0], x_t.shape[0])
    for axis, name in ((2, "height"), (3, "width")):
        if x_t.shape[axis] != params.frame_size or state.H.shape[axis] != params.frame_size:
            raise DimensionError("conv_lstm_cell_step", name, params.frame_size, x_t.shape[axis])

    ch = params.hidden_channels
    pad = params.padding
    w_x = ops.concat([getattr(params, f"W_x{g}") for g in GATES], axis=0)
    w_h = ops.concat([getattr(params, f"W_h{g}") for g in GATES], axis=0)
    b = ops.concat([getattr(params, f"b_{g}") for g in GATES], axis=0)
    pre = ops.add(ops.conv2d(x_t, w_x, b, padding=pad), ops.conv2d(state.H, w_h, None, padding=pad))

    def gate(index: int) -> Tensor:
        return ops.slice_channels(pre, index * ch, (index + 1) * ch)

    batch = x_t.shape[0]

    def peephole(name: str, cell: Tensor) -> Tensor:
        return ops.hadamard(ops.tile_batch(getattr(params, name), batch), cell)

    i_t = ops.sigmoid(ops.add(gate(0), peephole("W_ci", state.C)))
    f_t = ops.sigmoid(ops.add(gate(1), peephole("W_cf", state.C)))
    c_t = ops.add(ops.hadamard(f_t, state.C), ops.hadamard(i_t, ops.tanh(gate(2))))
    o_t = ops.sigmoid(ops.add(gate(3), peephole("W_co", c_t)))
    h_t = ops.hadamard(o_t, ops.tanh(c_t))
    return ConvLstmState(H=h_t, C=c_t)


def table_schedule(widths: Sequence[int] = DESK_WIDTHS, kernels: Sequence[int] = TABLE_KERNELS) -> List[Tuple[int, int]]:
    if len(widths) != len(kernels):
        raise ConfigurationError(f"{len(widths)} Conv-LSTM widths for {len(kernels)} kernel sizes")
    return list(zip(kernels, widths))


class ConvLstmStack(Module):
    """
    Stacked Conv-LSTM layers followed by a 3x3 Conv2d with sigmoid output.

    Every layer but the last hands its full hidden sequence (through ReLU) to
    the next; the last Conv-LSTM layer hands on only its final hidden state.
    """

    def __init__(self, schedule: Sequence[Tuple[int, int]], frame_size: int, rng: np.random.Generator,
                 in_channels: int = 3, dtype=DEFAULT_DTYPE):
        super().__init__()
        if not schedule:
            raise ConfigurationError("Conv-LSTM stack needs at least one layer")
        self.frame_size = frame_size
        self.cells = ModuleList()
        prev = in_channels
        for kernel_size, width in schedule:
            self.cells.append(ConvLstmCellParams(prev, width, kernel_size, frame_size, rng, dtype=dtype))
            prev = width
        self.output = Conv2dLayer(prev, 3, 3, rng, activation="sigmoid", dtype=dtype)
        self.dtype = dtype

    def forward(self, frames: Sequence[Tensor]) -> Tensor:
        """frames: T tensors of shape (B, 3, H, W), oldest first."""
        sequence = list(frames)
        last = len(self.cells) - 1
        for index, cell in enumerate(self.cells):
            batch = sequence[0].shape[0]
            state = ConvLstmState.zeros(batch, cell.hidden_channels, self.frame_size, dtype=self.dtype)
            outputs = []
            for x_t in sequence:
                state = conv_lstm_cell_step(cell, x_t, state)
                outputs.append(ops.relu(state.H))
            sequence = outputs if index < last else outputs[-1:]
        return self.output(sequence[0])
