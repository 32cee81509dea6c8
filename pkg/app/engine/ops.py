"""
Differentiable operations on Tensor.

Every operation checks its operand shapes, computes the forward value with
numpy, and records a backward closure returning one gradient per parent.
Broadcasting is limited to bias-add and scalar operands; anything else
raises DimensionError.
"""
from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.errors import DimensionError, ValidationFailure
from app.engine.tensor import Tensor

Scalar = Union[int, float]

ACTIVATIONS = ("sigmoid", "tanh", "relu", "leaky_relu")
LEAKY_SLOPE = 0.2

_AXIS_NAMES = ("batch", "channel", "height", "width")


def _axis_name(ndim: int, axis: int) -> str:
    if ndim == 4:
        return _AXIS_NAMES[axis]
    return f"axis {axis}"


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.ndim != b.ndim:
        raise DimensionError(op, "rank", a.ndim, b.ndim)
    for axis, (sa, sb) in enumerate(zip(a.shape, b.shape)):
        if sa != sb:
            raise DimensionError(op, _axis_name(a.ndim, axis), sa, sb)


def _require_rank(op: str, x: Tensor, rank: int) -> None:
    if x.ndim != rank:
        raise DimensionError(op, "rank", rank, x.ndim)


# ----- elementwise arithmetic -----

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._from_op("add", a.data + c, (a,), lambda g: (g,))
    _require_same_shape("add", a, b)
    return Tensor._from_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        c = float(a)
        return Tensor._from_op("sub", c - b.data, (b,), lambda g: (-g,))
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._from_op("sub", a.data - c, (a,), lambda g: (g,))
    _require_same_shape("sub", a, b)
    return Tensor._from_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(x: Tensor, factor: Scalar) -> Tensor:
    c = float(factor)
    return Tensor._from_op("scale", x.data * c, (x,), lambda g: (g * c,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two identically shaped tensors."""
    _require_same_shape("hadamard", a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op("hadamard", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise ValidationFailure("log: input must be strictly positive")
    return Tensor._from_op("log", np.log(xd), (x,), lambda g: (g / xd,))


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    xd = x.data
    inside = ((xd >= low) & (xd <= high)).astype(xd.dtype)
    return Tensor._from_op("clamp", np.clip(xd, low, high), (x,), lambda g: (g * inside,))


def abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """|a - b| with subgradient 0 where a == b."""
    _require_same_shape("abs_diff", a, b)
    diff = a.data - b.data
    sign = np.sign(diff)
    return Tensor._from_op("abs_diff", np.abs(diff), (a, b), lambda g: (g * sign, -g * sign))


# ----- activations -----

def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    # saturated inputs round to 0 or 1 in single precision; keep the open interval
    tiny = np.finfo(xd.dtype).tiny
    s = np.clip(s, tiny, np.nextafter(xd.dtype.type(1), xd.dtype.type(0)))
    return Tensor._from_op("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._from_op("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return Tensor._from_op("relu", x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._from_op("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def activation(x: Tensor, kind: Optional[str]) -> Tensor:
    if kind is None:
        return x
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x)
    raise ValidationFailure(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")


# ----- reductions and reshaping -----

def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    out = np.asarray(x.data.sum(), dtype=dtype)
    return Tensor._from_op("sum", out, (x,), lambda g: (np.full(shape, g, dtype=dtype),))


def mean_all(x: Tensor) -> Tensor:
    shape, dtype, n = x.shape, x.dtype, x.size
    out = np.asarray(x.data.mean(), dtype=dtype)
    return Tensor._from_op("mean", out, (x,), lambda g: (np.full(shape, g / n, dtype=dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    original = x.shape
    return Tensor._from_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along one axis; all other axes must agree."""
    if not tensors:
        raise ValidationFailure("concat: no tensors given")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim:
            raise DimensionError("concat", "rank", ref.ndim, t.ndim)
        for ax in range(ref.ndim):
            if ax != axis and t.shape[ax] != ref.shape[ax]:
                raise DimensionError("concat", _axis_name(ref.ndim, ax), ref.shape[ax], t.shape[ax])
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _require_rank("slice_channels", x, 4)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[:, start:stop] = g
        return (full,)

    return Tensor._from_op("slice_channels", x.data[:, start:stop].copy(), (x,), backward)


def tile_batch(x: Tensor, batch: int) -> Tensor:
    """Repeat a leading singleton batch axis; gradients are summed back over the batch."""
    if x.shape[0] != 1:
        raise DimensionError("tile_batch", "batch", 1, x.shape[0])
    out = np.repeat(x.data, batch, axis=0)
    return Tensor._from_op("tile_batch", out, (x,), lambda g: (g.sum(axis=0, keepdims=True),))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    _require_rank("upsample_nearest", x, 4)
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._from_op("upsample_nearest", out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    _require_rank("global_avg_pool", x, 4)
    b, c, h, w = x.shape
    n = h * w

    def backward(g):
        return (np.broadcast_to((g / n)[:, :, None, None], (b, c, h, w)).astype(x.dtype),)

    return Tensor._from_op("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (B, in) @ weight(out, in)^T + bias(out)."""
    _require_rank("linear", x, 2)
    if x.shape[1] != weight.shape[1]:
        raise DimensionError("linear", "features", weight.shape[1], x.shape[1])
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return Tensor._from_op("linear", out, parents, backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op("softmax", s, (x,), backward)


def select_column(x: Tensor, column: int) -> Tensor:
    """(B, K) -> (B,) picking one column."""
    _require_rank("select_column", x, 2)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[:, column] = g
        return (full,)

    return Tensor._from_op("select_column", x.data[:, column].copy(), (x,), backward)


# ----- convolution -----

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation with zero padding.

    Args:
        x: (B, Cin, H, W)
        kernel: (Cout, Cin, kh, kw)
        bias: (Cout,) or None
    Returns:
        (B, Cout, H', W') with H' = (H + 2*padding - kh) // stride + 1.
    """
    _require_rank("conv2d", x, 4)
    _require_rank("conv2d", kernel, 4)
    if stride < 1 or padding < 0:
        raise ValidationFailure(f"conv2d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    bsz, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if cin != kcin:
        raise DimensionError("conv2d", "channel", kcin, cin)
    if kh > h + 2 * padding:
        raise DimensionError("conv2d", "height", f"<= {h + 2 * padding}", kh)
    if kw > w + 2 * padding:
        raise DimensionError("conv2d", "width", f"<= {w + 2 * padding}", kw)
    if bias is not None and bias.shape != (cout,):
        raise DimensionError("conv2d", "bias", (cout,), bias.shape)

    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    kd = kernel.data
    out = np.tensordot(windows, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    parents = [x, kernel]
    if bias is not None:
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            h_stop = stride * (ho - 1) + 1
            w_stop = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, kd[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    gxp[:, :, i:i + h_stop:stride, j:j + w_stop:stride] += contrib
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
        gk = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])) if kernel.requires_grad else None
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._from_op("conv2d", out, tuple(parents), backward)


def same_padding(kernel_size: int) -> int:
    if kernel_size % 2 == 0:
        raise ValidationFailure(f"'same' padding needs an odd kernel, got {kernel_size}")
    return (kernel_size - 1) // 2
