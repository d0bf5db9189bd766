"""Tensor with a gradient buffer and a tape-free reverse-mode graph."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..exceptions import BackwardStateError


def as_float(data, dtype=None) -> np.ndarray:
    """``data`` as float32 if it already is (or ``dtype`` says so), else float64."""
    if dtype is None:
        arr = np.asarray(data)
        dtype = np.float32 if arr.dtype == np.float32 else np.float64
    return np.asarray(data, dtype=dtype)


class Tensor:
    """N-dimensional float array plus an optional gradient of the same shape.

    Data is stored as float64 unless it arrives as float32, which is kept.

    Tensors produced by the differentiable functions in :mod:`meltnet.engine.ops`
    remember their parents and a closure that pushes the output gradient back
    to them. Calling :meth:`backward` on a scalar result walks that graph once;
    the graph is released afterwards and a second call raises
    :class:`BackwardStateError`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.data = as_float(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar. Leaf gradients accumulate."""
        if self._consumed:
            raise BackwardStateError("backward already ran on this graph; run a new forward pass first")
        if self.data.size != 1:
            raise BackwardStateError(f"backward needs a scalar output, got shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order

