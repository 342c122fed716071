"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the popularity network: each op records its
backward closure on the value it produces, and ``backward`` replays the
tape in reverse topological order.  Gradients accumulate into ``.grad``.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data, dtype=float)
        self.grad = np.zeros_like(self.data)
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var(shape={self.data.shape})"

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
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
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Var, b: Var) -> Var:
    out = Var(a.data + b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def sub(a: Var, b: Var) -> Var:
    out = Var(a.data - b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def mul(a: Var, b: Var) -> Var:
    out = Var(a.data * b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

    out._backward = backward
    return out


def matmul(a: Var, b: Var) -> Var:
    out = Var(a.data @ b.data, (a, b))

    def backward():
        ga, gb = out.grad, None
        if a.data.ndim == 1 and b.data.ndim == 1:
            a.grad += out.grad * b.data
            b.grad += out.grad * a.data
            return
        if a.data.ndim == 1:  # (k,) @ (k, n) -> (n,)
            a.grad += b.data @ out.grad
            b.grad += np.outer(a.data, out.grad)
            return
        if b.data.ndim == 1:  # (m, k) @ (k,) -> (m,)
            a.grad += np.outer(out.grad, b.data)
            b.grad += a.data.T @ out.grad
            return
        a.grad += ga @ b.data.T
        b.grad += a.data.T @ ga

    out._backward = backward
    return out


def transpose(a: Var) -> Var:
    out = Var(a.data.T, (a,))

    def backward():
        a.grad += out.grad.T

    out._backward = backward
    return out


def reshape(a: Var, shape) -> Var:
    out = Var(a.data.reshape(shape), (a,))

    def backward():
        a.grad += out.grad.reshape(a.data.shape)

    out._backward = backward
    return out


def sigmoid(a: Var) -> Var:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Var(s, (a,))

    def backward():
        a.grad += out.grad * s * (1.0 - s)

    out._backward = backward
    return out


def relu(a: Var) -> Var:
    out = Var(np.maximum(a.data, 0.0), (a,))

    def backward():
        a.grad += out.grad * (a.data > 0.0)

    out._backward = backward
    return out


def row_softmax(a: Var) -> Var:
    """Softmax along the last axis, one distribution per row."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Var(y, (a,))

    def backward():
        g = out.grad
        a.grad += y * (g - (g * y).sum(axis=-1, keepdims=True))

    out._backward = backward
    return out


def mean_abs(a: Var) -> Var:
    """Mean absolute value; the subgradient at 0 is taken as 0."""
    out = Var(np.mean(np.abs(a.data)), (a,))

    def backward():
        a.grad += out.grad * np.sign(a.data) / a.data.size

    out._backward = backward
    return out


def conv1d_same(x: Var, w: Var, bias: Var | None = None) -> Var:
    """Width-3 convolution along the last axis with zero same-padding.

    x is (N, T), w is (3,); out[i, t] = sum_u w[u] * x[i, t + u - 1].
    """
    if w.data.shape != (3,):
        raise ValueError(f"kernel must have shape (3,), got {w.data.shape}")
    n, t = x.data.shape
    xp = np.zeros((n, t + 2))
    xp[:, 1 : t + 1] = x.data
    val = w.data[0] * xp[:, :t] + w.data[1] * xp[:, 1 : t + 1] + w.data[2] * xp[:, 2 :]
    if bias is not None:
        val = val + bias.data
    parents = (x, w) if bias is None else (x, w, bias)
    out = Var(val, parents)

    def backward():
        g = out.grad
        gp = np.zeros((n, t + 2))
        gp[:, :t] += w.data[0] * g
        gp[:, 1 : t + 1] += w.data[1] * g
        gp[:, 2 :] += w.data[2] * g
        x.grad += gp[:, 1 : t + 1]
        w.grad[0] += float((xp[:, :t] * g).sum())
        w.grad[1] += float((xp[:, 1 : t + 1] * g).sum())
        w.grad[2] += float((xp[:, 2 :] * g).sum())
        if bias is not None:
            bias.grad += _unbroadcast(g, bias.data.shape)

    out._backward = backward
    return out


def outer(a: Var, b: Var) -> Var:
    """Outer product of two vectors."""
    out = Var(np.outer(a.data, b.data), (a, b))

    def backward():
        a.grad += out.grad @ b.data
        b.grad += a.data @ out.grad

    out._backward = backward
    return out


def scale(a: Var, s: Var) -> Var:
    """Multiply an array by a scalar Var."""
    out = Var(a.data * s.data, (a, s))

    def backward():
        a.grad += out.grad * s.data
        s.grad += np.sum(out.grad * a.data)

    out._backward = backward
    return out


def pick(a: Var, index: int) -> Var:
    """Extract one element of a vector as a scalar Var."""
    out = Var(a.data[index], (a,))

    def backward():
        a.grad[index] += out.grad

    out._backward = backward
    return out


def const(data) -> Var:
    """Leaf holding data that never needs a gradient read."""
    return Var(data)
