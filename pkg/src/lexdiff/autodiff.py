"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the ops the denoiser needs: broadcast arithmetic, matmul,
axis swaps, activations, last-axis softmax, and full reduction. Gradients
accumulate in float64. Graph edges are only recorded when an input requires
grad, so inference-time forwards stay plain numpy with a thin wrapper.
"""

from __future__ import annotations

import numpy as np


def _sum_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo numpy broadcasting: reduce grad back to the operand's shape.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _sum_to(grad, self.data.shape)

    def backward(self) -> None:
        """Reverse accumulation from this (scalar) tensor through the graph."""
        if self.data.ndim != 0:
            raise ValueError("backward() expects a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad)
        if b.requires_grad:
            b._accumulate(out.grad)

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * b.data)
        if b.requires_grad:
            b._accumulate(out.grad * a.data)

    out = _make(out_data, (a, b), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ out.grad)

    out = _make(out_data, (a, b), backward)
    return out


def swap_last(a: Tensor) -> Tensor:
    """Transpose the trailing two axes."""
    a = as_tensor(a)
    out_data = np.swapaxes(a.data, -1, -2)

    def backward():
        a._accumulate(np.swapaxes(out.grad, -1, -2))

    out = _make(out_data, (a,), backward)
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # Branch on sign so neither exp argument can overflow.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_stable(a.data)

    def backward():
        a._accumulate(out.grad * s * (1.0 - s))

    out = _make(s, (a,), backward)
    return out


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward():
        a._accumulate(out.grad * (1.0 - y * y))

    out = _make(y, (a,), backward)
    return out


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); smooth, so finite differences behave everywhere."""
    a = as_tensor(a)
    s = _sigmoid_stable(a.data)

    def backward():
        a._accumulate(out.grad * (s + a.data * s * (1.0 - s)))

    out = _make(a.data * s, (a,), backward)
    return out


def softmax_last(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward():
        g = out.grad
        a._accumulate(y * (g - np.sum(g * y, axis=-1, keepdims=True)))

    out = _make(y, (a,), backward)
    return out


def total_sum(a: Tensor) -> Tensor:
    """Sum over every element, yielding a scalar tensor."""
    a = as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def backward():
        a._accumulate(np.broadcast_to(out.grad, a.data.shape))

    out = _make(out_data, (a,), backward)
    return out
