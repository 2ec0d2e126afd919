"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the unfolded estimator needs are implemented: elementwise
arithmetic with broadcasting, matmul against constants or parameters, relu /
sigmoid, reshape / stack / sum, and the conv kernel.  Complex quantities are
carried as (real, imaginary) Tensor pairs -- see the c_* helpers -- which
makes every gradient a plain real gradient with respect to the real and
imaginary parts separately.

Graphs are built per call and freed afterwards; nothing here is thread-aware.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph traversal ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis=axis)


def _unbroadcast(grad, shape):
    """Reduce grad back to `shape` after numpy broadcasting."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tracked(*xs):
    return [x for x in xs if isinstance(x, Tensor) and x.requires_grad]


def _node(data, parents, backward):
    live = [p for p in parents if isinstance(p, Tensor) and p.requires_grad]
    if not live:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=tuple(live), backward=backward)


def add(a, b):
    da, db_ = _data(a), _data(b)
    out_data = da + db_

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g, da.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(g, db_.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b):
    da, db_ = _data(a), _data(b)
    out_data = da - db_

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g, da.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(-g, db_.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b):
    da, db_ = _data(a), _data(b)
    out_data = da * db_

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g * db_, da.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(g * da, db_.shape))

    return _node(out_data, (a, b), backward)


def div(a, b):
    da, db_ = _data(a), _data(b)
    out_data = da / db_

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g / db_, da.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / db_, db_.shape))

    return _node(out_data, (a, b), backward)


def matmul(a, b):
    """2D @ 2D or 2D @ 1D; either operand may be a constant array."""
    da, db_ = _data(a), _data(b)
    out_data = da @ db_

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            ga = np.outer(g, db_) if db_.ndim == 1 else g @ db_.T
            a._accumulate(ga)
        if isinstance(b, Tensor) and b.requires_grad:
            gb = da.T @ g
            b._accumulate(gb)

    return _node(out_data, (a, b), backward)


def relu(a):
    da = _data(a)
    mask = da > 0
    out_data = da * mask

    def backward(g):
        a._accumulate(g * mask)

    return _node(out_data, (a,), backward)


def sigmoid(a):
    da = _data(a)
    out_data = 1.0 / (1.0 + np.exp(-da))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


def maximum_const(a, floor):
    """Elementwise max with a constant; gradient flows where a wins."""
    da = _data(a)
    mask = da > floor
    out_data = np.maximum(da, floor)

    def backward(g):
        a._accumulate(g * mask)

    return _node(out_data, (a,), backward)


def reshape(a, shape):
    da = _data(a)
    out_data = da.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(da.shape))

    return _node(out_data, (a,), backward)


def stack(tensors, axis=-1):
    datas = [_data(t) for t in tensors]
    out_data = np.stack(datas, axis=axis)

    def backward(g):
        slices = np.moveaxis(g, axis, 0)
        for t, gs in zip(tensors, slices):
            if isinstance(t, Tensor) and t.requires_grad:
                t._accumulate(gs)

    return _node(out_data, tuple(tensors), backward)


def tsum(a, axis=None):
    da = _data(a)
    out_data = da.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, da.shape).copy())
        else:
            g_exp = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g_exp, da.shape).copy())

    return _node(out_data, (a,), backward)


def mean_all(a):
    da = _data(a)
    return mul(tsum(a), 1.0 / da.size)


def conv2d(x, kernel, bias):
    """Same-padded cross-correlation via the selected kernel backend.
    x (B,S,Q,Cin), kernel (kh,kw,Cin,Cout) Tensor, bias (Cout) Tensor."""
    dx_, dk_, db_ = _data(x), _data(kernel), _data(bias)
    out_data = kernels.conv2d_forward(dx_, dk_, db_)

    def backward(g):
        gx, gk, gb = kernels.conv2d_backward(dx_, dk_, np.ascontiguousarray(g))
        if isinstance(x, Tensor) and x.requires_grad:
            x._accumulate(gx)
        if isinstance(kernel, Tensor) and kernel.requires_grad:
            kernel._accumulate(gk)
        if isinstance(bias, Tensor) and bias.requires_grad:
            bias._accumulate(gb)

    return _node(out_data, (x, kernel, bias), backward)


# -- complex pairs -----------------------------------------------------------


class CT:
    """A complex quantity as a (re, im) pair of Tensors or constant arrays."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = re
        self.im = im

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def value(self):
        return _data(self.re) + 1j * _data(self.im)


def c_add(a: CT, b: CT) -> CT:
    return CT(add(a.re, b.re), add(a.im, b.im))


def c_sub(a: CT, b: CT) -> CT:
    return CT(sub(a.re, b.re), sub(a.im, b.im))


def c_mul_real(r, a: CT) -> CT:
    """real * complex (broadcasting as in numpy)."""
    return CT(mul(r, a.re), mul(r, a.im))


def c_div_real(a: CT, r) -> CT:
    return CT(div(a.re, r), div(a.im, r))


def c_matmul_const(a: CT, Bc) -> CT:
    """(complex batch) @ (constant complex matrix): four real matmuls."""
    Br, Bi = np.ascontiguousarray(Bc.real), np.ascontiguousarray(Bc.imag)
    re = sub(matmul(a.re, Br), matmul(a.im, Bi))
    im = add(matmul(a.re, Bi), matmul(a.im, Br))
    return CT(re, im)


def c_abs2(a: CT):
    return add(mul(a.re, a.re), mul(a.im, a.im))
