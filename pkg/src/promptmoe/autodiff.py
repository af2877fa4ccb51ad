"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Var` wraps a float64 ndarray and records the operations applied to
it; calling :meth:`Var.backward` on a scalar result accumulates gradients into
every upstream ``Var``. The op set is deliberately small: exactly what the
prompt-generation and attention pipelines plus the mixture-regression
objective need. Elementwise operators broadcast like numpy (gradients are
summed back over broadcast axes); ``@`` is restricted to 2-D matrices.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Var",
    "exp",
    "tanh",
    "relu",
    "sqrt",
    "asum",
    "concat",
    "softmax_rows",
    "channelwise_conv2d",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Var:
    """Array node in the differentiation tape."""

    # Make numpy defer binary ops to Var's reflected operators.
    __array_ufunc__ = None
    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents: tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[tuple["Var", Callable], ...] = parents

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        a, b = self, _wrap(other)
        return Var(
            a.value + b.value,
            (
                (a, lambda g: _unbroadcast(g, a.value.shape)),
                (b, lambda g: _unbroadcast(g, b.value.shape)),
            ),
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        a, b = self, _wrap(other)
        return Var(
            a.value * b.value,
            (
                (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
                (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _wrap(other)
        return Var(
            a.value / b.value,
            (
                (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
                (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
            ),
        )

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("only constant exponents are supported")
        c = float(exponent)
        a = self
        return Var(
            a.value**c,
            ((a, lambda g: g * c * a.value ** (c - 1.0)),),
        )

    def __matmul__(self, other):
        a, b = self, _wrap(other)
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise ShapeError("Var @ Var requires 2-D operands")
        return Var(
            a.value @ b.value,
            (
                (a, lambda g: g @ b.value.T),
                (b, lambda g: a.value.T @ g),
            ),
        )

    def __rmatmul__(self, other):
        return _wrap(other) @ self

    # -- shape manipulation ---------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.value.shape
        return Var(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),))

    @property
    def T(self):
        a = self
        return Var(a.value.T, ((a, lambda g: g.T),))

    def sum(self, axis=None, keepdims: bool = False):
        return asum(self, axis=axis, keepdims=keepdims)

    # -- reverse sweep ---------------------------------------------------
    def backward(self) -> None:
        """Accumulate gradients of this scalar into every upstream Var."""
        if self.value.size != 1:
            raise DomainError("backward() requires a scalar output")
        topo: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node.grad is None:
                continue
            for parent, vjp in node._parents:
                contribution = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad = parent.grad + contribution


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


# -- elementwise functions -------------------------------------------------


def exp(x: Var) -> Var:
    e = np.exp(x.value)
    return Var(e, ((x, lambda g: g * e),))


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return Var(t, ((x, lambda g: g * (1.0 - t * t)),))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), ((x, lambda g: g * mask),))


def sqrt(x: Var) -> Var:
    s = np.sqrt(x.value)
    return Var(s, ((x, lambda g: g * 0.5 / s),))


# -- reductions and structure ------------------------------------------------


def asum(x: Var, axis=None, keepdims: bool = False) -> Var:
    out = x.value.sum(axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return np.broadcast_to(gg, shape).copy()

    return Var(out, ((x, vjp),))


def concat(parts, axis: int = 0) -> Var:
    parts = [_wrap(p) for p in parts]
    values = [p.value for p in parts]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(k):
        lo, hi = offsets[k], offsets[k + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return Var(
        np.concatenate(values, axis=axis),
        tuple((p, make_vjp(k)) for k, p in enumerate(parts)),
    )


def softmax_rows(x: Var) -> Var:
    z = x.value
    if z.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D array, got shape {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    return Var(y, ((x, vjp),))


def channelwise_conv2d(x: Var, kernel: Var) -> Var:
    """Valid 2-D convolution, one (K, K) kernel shared across all channels."""
    x = _wrap(x)
    kernel = _wrap(kernel)
    xv, kv = x.value, kernel.value
    if xv.ndim != 3:
        raise ShapeError(f"feature map must be (H, W, d), got shape {xv.shape}")
    if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise ShapeError(f"kernel must be square (K, K), got shape {kv.shape}")
    h, w, _ = xv.shape
    k = kv.shape[0]
    if k > h or k > w:
        raise ShapeError(f"kernel size {k} exceeds feature map {h}x{w}")
    out_h, out_w = h - k + 1, w - k + 1
    out = np.zeros((out_h, out_w, xv.shape[2]))
    for a in range(k):
        for b in range(k):
            out += kv[a, b] * xv[a : a + out_h, b : b + out_w, :]

    def vjp_x(g):
        gx = np.zeros_like(xv)
        for a in range(k):
            for b in range(k):
                gx[a : a + out_h, b : b + out_w, :] += kv[a, b] * g
        return gx

    def vjp_k(g):
        gk = np.zeros_like(kv)
        for a in range(k):
            for b in range(k):
                gk[a, b] = np.sum(g * xv[a : a + out_h, b : b + out_w, :])
        return gk

    return Var(out, ((x, vjp_x), (kernel, vjp_k)))
