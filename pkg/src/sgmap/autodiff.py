"""Minimal reverse-mode automatic differentiation over numpy arrays.

Supports exactly the operations the prediction network needs: dense
matmul, elementwise arithmetic, sigmoid/tanh/relu, softmax and
log-softmax, concatenation, max reductions, and scalar reductions.
Graphs are built eagerly and freed after backward().
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reverse numpy broadcasting: reduce grad back to the operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array value plus the closure that routes gradients to its parents."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Backpropagate from a scalar tensor."""
        if self.value.shape != ():
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.array(1.0)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _binary(a: Tensor, b: Tensor, value, da, db) -> Tensor:
    out = Tensor(value, parents=(a, b))

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_sum_to_shape(da(grad), a.value.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(db(grad), b.value.shape))

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.value + b.value, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.value - b.value, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.value * b.value, lambda g: g * b.value, lambda g: g * a.value)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary(
        a,
        b,
        a.value / b.value,
        lambda g: g / b.value,
        lambda g: -g * a.value / (b.value * b.value),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    out = Tensor(av @ bv, parents=(a, b))

    def backward(grad):
        if a.requires_grad:
            if av.ndim == 2 and bv.ndim == 1:
                ga = np.outer(grad, bv)
            elif av.ndim == 1 and bv.ndim == 1:
                ga = grad * bv
            elif av.ndim == 1 and bv.ndim == 2:
                ga = grad @ bv.T
            else:
                ga = grad @ bv.T
            a._accumulate(ga)
        if b.requires_grad:
            if av.ndim == 2 and bv.ndim == 1:
                gb = av.T @ grad
            elif av.ndim == 1 and bv.ndim == 1:
                gb = grad * av
            elif av.ndim == 1 and bv.ndim == 2:
                gb = np.outer(av, grad)
            else:
                gb = av.T @ grad
            b._accumulate(gb)

    out._backward = backward
    return out


def _unary(a: Tensor, value, da) -> Tensor:
    out = Tensor(value, parents=(a,))

    def backward(grad):
        if a.requires_grad:
            a._accumulate(da(grad))

    out._backward = backward
    return out


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function (only exponentiates non-positives)."""
    z = np.exp(-np.abs(x))
    return np.where(np.asarray(x) >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    s = stable_sigmoid(a.value)
    return _unary(a, s, lambda g: g * s * (1.0 - s))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return _unary(a, t, lambda g: g * (1.0 - t * t))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _unary(a, a.value * mask, lambda g: g * mask)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    return _unary(a, e, lambda g: g * e)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.value), lambda g: g / a.value)


def softmax(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max()
    e = np.exp(shifted)
    s = e / e.sum()
    return _unary(a, s, lambda g: s * (g - np.dot(g, s)))


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max()
    ls = shifted - np.log(np.exp(shifted).sum())
    p = np.exp(ls)
    return _unary(a, ls, lambda g: g - p * g.sum())


def concat(parts: list[Tensor]) -> Tensor:
    sizes = [p.value.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts]), parents=tuple(parts))

    def backward(grad):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                p._accumulate(grad[offset : offset + size])
            offset += size

    out._backward = backward
    return out


def stack_max(parts: list[Tensor]) -> Tensor:
    """Componentwise max over equally shaped vectors; gradient flows to the
    first argmax on ties."""
    stacked = np.stack([p.value for p in parts])
    arg = stacked.argmax(axis=0)
    out = Tensor(stacked.max(axis=0), parents=tuple(parts))

    def backward(grad):
        for idx, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(grad * (arg == idx))

    out._backward = backward
    return out


def max_axis0(a: Tensor) -> Tensor:
    """Row-wise max of a (N, D) tensor down to (D,)."""
    arg = a.value.argmax(axis=0)
    out = Tensor(a.value.max(axis=0), parents=(a,))

    def backward(grad):
        if a.requires_grad:
            ga = np.zeros_like(a.value)
            ga[arg, np.arange(a.value.shape[1])] = grad
            a._accumulate(ga)

    out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    return _unary(a, a.value.sum(), lambda g: np.full_like(a.value, g))


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    return _unary(a, a.value.mean(), lambda g: np.full_like(a.value, g / n))


def gather(a: Tensor, index: int) -> Tensor:
    out = Tensor(a.value[index], parents=(a,))

    def backward(grad):
        if a.requires_grad:
            ga = np.zeros_like(a.value)
            ga[index] = grad
            a._accumulate(ga)

    out._backward = backward
    return out
