"""
Tensor type and reverse-mode differentiation.

A Tensor wraps a numpy array and remembers the operation that produced it.
Calling backward() on a scalar walks the recorded graph in reverse
topological order and accumulates gradients into every leaf tensor that
requires them. Non-leaf gradients are not retained.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DimensionError, NonFiniteError, OccReidError

DEFAULT_DTYPE = np.float32

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current context (inference)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """
    N-dimensional array participating in reverse-mode differentiation.

    Attributes:
        data: numpy array, row-major; image data is laid out (batch, channel, height, width).
        requires_grad: whether backward() should produce a gradient for this tensor.
        grad: same-shape gradient buffer, populated by backward() on leaf tensors.
        name: optional label, used by the parameter registry.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        target = dtype if dtype is not None else (
            data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        )
        self.data = np.array(data, dtype=target, copy=True)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, op: str, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ----- array-like conveniences -----

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item", "size", 1, self.data.size)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op})"

    # ----- differentiation -----

    def backward(self) -> None:
        """
        Populate .grad on every requires_grad leaf reachable from this scalar.
        A leaf in the graph that no path differentiates through gets zeros.
        Gradients accumulate across calls; use zero_grads() between steps.
        """
        if self.data.size != 1:
            raise OccReidError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                if node._backward is None and node.grad is None:
                    node.grad = np.zeros_like(node.data)
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ----- operators (delegated to ops) -----

    def __add__(self, other):
        from app.engine import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from app.engine import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.engine import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.engine import ops
        if isinstance(other, Tensor):
            return ops.hadamard(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from app.engine import ops
        return ops.scale(self, -1.0)

    def sum(self):
        from app.engine import ops
        return ops.sum_all(self)

    def mean(self):
        from app.engine import ops
        return ops.mean_all(self)

    def reshape(self, *shape):
        from app.engine import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _topological_order(root: Tensor) -> list:
    # Iterative DFS; recurrent graphs are too deep for recursion.
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def zero_grads(params) -> None:
    """Reset every buffer to zeros; a parameter the next loss never reaches keeps a zero gradient."""
    for p in params:
        p.grad = np.zeros_like(p.data)
