"""Dense float tensors with reverse-mode automatic differentiation.

The universal value type is a rank-4 array laid out row-major as
(batch, channel, height, width).  float32 is the working precision;
float64 exists for finite-difference gradient checks.

Autodiff is an eager tape: every differentiable operation returns a new
Tensor that remembers its parents and a vector-Jacobian product closure.
``Tensor.backward(seed)`` walks the recorded graph in reverse topological
order and accumulates gradients into ``.grad`` of every tensor that
requires them.  Tensors are treated as immutable once produced by an op;
only optimizer steps mutate parameter ``.data`` in place, between tapes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import GradientError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / benchmarking)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy-backed value plus an optional gradient and tape record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    # -- graph-building ops used directly on tensors ----------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.shape != other.shape:
            raise ShapeError(f"add requires equal shapes, got {self.shape} vs {other.shape}")
        out_data = self.data + other.data
        return make_op(out_data, (self, other), lambda g: (g, g))

    def sum(self) -> "Tensor":
        shape, dtype = self.data.shape, self.data.dtype
        out_data = np.asarray(self.data.sum(), dtype=dtype)

        def vjp(g):
            return (np.full(shape, g, dtype=dtype),)

        return make_op(out_data, (self,), vjp)

    # -- backward pass -----------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate gradients of a scalar function of this tensor.

        ``grad`` is the seed dL/d(self); it defaults to 1 for scalar
        tensors and is mandatory otherwise.
        """
        if not (self.requires_grad or self._vjp is not None):
            raise GradientError("backward called on a tensor with no recorded forward graph")
        if grad is None:
            if self.data.size != 1:
                raise GradientError("backward on a non-scalar tensor needs an explicit seed gradient")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} does not match {self.data.shape}")

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if not (parent.requires_grad or parent._vjp is not None):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _scalar_error(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topo_order(root: Tensor) -> list:
    """Reverse topological order of the recorded graph, iteratively."""
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def make_op(out_data: np.ndarray, parents: Tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap an op result, recording the tape edge when gradients are live."""
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad or p._vjp is not None for p in parents):
        out.requires_grad = False
        out._parents = parents
        out._vjp = vjp
        # intermediate nodes propagate; .grad is only retained on leaves
        # that were explicitly marked requires_grad
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)
