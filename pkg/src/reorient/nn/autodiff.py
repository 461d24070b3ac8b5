"""Reverse-mode autodiff over numpy arrays.

A small tape-based Tensor: enough ops for MLPs, causal attention stacks and
gated recurrent cells, nothing more. Gradients are checked against central
finite differences in the test suite.
"""

import numpy as np

# computation dtype; parameters are stored as float32 but lifted to
# float64 so gradients survive finite-difference checks at 1e-4
DTYPE = np.float64


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # sum out prepended axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the computation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _node(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)

        def backward(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return self._node(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return self._node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)

        def backward(g):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))

        return self._node(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return self._lift(other) * self ** -1.0

    def __pow__(self, p):
        assert np.isscalar(p)

        def backward(g):
            return (g * p * self.data ** (p - 1),)

        return self._node(self.data ** p, (self,), backward)

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data

        def backward(g):
            if b.ndim == 1:
                ga = np.outer(g, b) if a.ndim > 1 else g * b
                gb = a.T @ g if a.ndim > 1 else a * g
            elif a.ndim == 1:
                ga = g @ b.swapaxes(-1, -2)
                gb = np.outer(a, g)
            else:
                ga = _unbroadcast(g @ b.swapaxes(-1, -2), a.shape)
                gb = _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape)
            return (ga.astype(DTYPE), gb.astype(DTYPE))

        return self._node(a @ b, (self, other), backward)

    # -- nonlinearities ------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        return self._node(y, (self,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-self.data))
        return self._node(y, (self,), lambda g: (g * y * (1.0 - y),))

    def relu(self):
        mask = self.data > 0
        return self._node(self.data * mask, (self,), lambda g: (g * mask,))

    def exp(self):
        y = np.exp(self.data)
        return self._node(y, (self,), lambda g: (g * y,))

    def log(self):
        return self._node(np.log(self.data), (self,),
                          lambda g: (g / self.data,))

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape):
        old = self.shape
        return self._node(self.data.reshape(*shape), (self,),
                          lambda g: (g.reshape(old),))

    def swapaxes(self, a, b):
        return self._node(self.data.swapaxes(a, b), (self,),
                          lambda g: (g.swapaxes(a, b),))

    def __getitem__(self, idx):
        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)

        return self._node(self.data[idx], (self,), backward)

    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is None:
                return (np.full_like(self.data, 1.0) * g,)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.shape).astype(DTYPE).copy(),)

        return self._node(self.data.sum(axis=axis, keepdims=keepdims),
                          (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- composites ----------------------------------------------------

    def softmax(self, axis=-1):
        # max-shift is a constant w.r.t. the gradient of softmax
        shifted = self - Tensor(self.data.max(axis=axis, keepdims=True))
        e = shifted.exp()
        return e / e.sum(axis=axis, keepdims=True)

    def layer_norm(self, gain, bias, eps=1e-5):
        mu = self.mean(axis=-1, keepdims=True)
        centered = self - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + eps) ** -0.5 * gain + bias

    # -- backward pass -------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss, got shape %s"
                             % (self.shape,))
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        for t in order:
            t.grad = np.zeros_like(t.data)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is None:
                continue
            gs = t._backward(t.grad)
            for p, g in zip(t._parents, gs):
                if p.requires_grad:
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
                    p.grad += g


def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p)
                     for p in np.split(g, splits, axis=axis))

    return Tensor._node(np.concatenate(datas, axis=axis), tuple(tensors),
                        backward)


def stack(tensors, axis=0):
    def backward(g):
        return tuple(np.ascontiguousarray(p.squeeze(axis))
                     for p in np.split(g, len(tensors), axis=axis))

    return Tensor._node(np.stack([t.data for t in tensors], axis=axis),
                        tuple(tensors), backward)
