"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the handful of operations the embedding network and the triplet loss
need are provided. Every op records its parents and a closure that pushes the
upstream gradient back to them; ``Tensor.backward`` walks the graph in
reverse topological order.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    # Sum out axes that numpy broadcasting added or stretched.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        # in place so that preassigned gradient views (flat buffers) fill up
        self.grad += g

    def backward(self, grad=None):
        """Propagate gradients from this tensor to every leaf that requires them."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor(self.data + other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor(self.data - other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, a), -_unbroadcast(g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def back(g):
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

        return Tensor(x * y, _parents=(self, other), _backward=back)

    __rmul__ = __mul__

    def __matmul__(self, other):
        x, w = self.data, other.data
        return Tensor(x @ w, _parents=(self, other),
                      _backward=lambda g: (g @ w.T, x.T @ g))

    def __getitem__(self, index):
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            full[index] = g
            return (full,)

        return Tensor(self.data[index], _parents=(self,), _backward=back)

    # reductions and nonlinearities -------------------------------------------

    def sum(self):
        shape = self.shape
        return Tensor(self.data.sum(), _parents=(self,),
                      _backward=lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def relu(self):
        mask = self.data > 0
        return Tensor(np.where(mask, self.data, 0.0), _parents=(self,),
                      _backward=lambda g: (g * mask,))


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def prelu(x, slope):
    """``x`` where positive, ``slope * x`` elsewhere; ``slope`` is a learnable scalar."""
    pos = x.data > 0
    a = slope.data

    def back(g):
        gx = np.where(pos, g, g * a)
        ga = np.sum(np.where(pos, 0.0, g * x.data)).reshape(a.shape)
        return gx, ga

    return Tensor(np.where(pos, x.data, a * x.data), _parents=(x, slope), _backward=back)


def row_norm(x):
    """Euclidean norm of each row of a 2-D tensor.

    The subgradient at a zero row is taken as 0, so coincident points never
    produce NaN gradients.
    """
    norms = np.sqrt(np.sum(x.data * x.data, axis=1))

    def back(g):
        safe = np.where(norms > 0, norms, 1.0)
        scale = np.where(norms > 0, g / safe, 0.0)
        return (scale[:, None] * x.data,)

    return Tensor(norms, _parents=(x,), _backward=back)
