"""Reverse-mode automatic differentiation over small dense float64 arrays.

A ``Value`` holds a numpy payload (scalar or array), an accumulated gradient
and the list of parents together with a vector-Jacobian closure for each.
Nodes created from constants only (no tracked parents) are not recorded, so
the graph only contains what actually depends on a trainable leaf.

    >>> x = Value(2.0, requires_grad=True); y = Value(3.0, requires_grad=True)
    >>> grads = backward(x * y)
    >>> float(grads[x]), float(grads[y])
    (3.0, 2.0)
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Value", "Tape", "DomainError", "GraphError", "backward", "as_value",
    "exp", "log", "max0", "leaky_relu", "sigmoid", "tanh", "logsumexp",
    "erfinv", "erfinv_array", "clip", "concat", "dot", "stack",
]


class DomainError(ValueError):
    """Primitive evaluated outside its mathematical domain."""


class GraphError(RuntimeError):
    """Malformed computation graph (cycle, non-scalar root, shape mismatch)."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes numpy broadcasting introduced
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Value:
    """Node of the differentiation graph.

    ``parents`` is a tuple of ``(node, vjp)`` pairs where ``vjp`` maps the
    upstream gradient of this node to the contribution for ``node``.
    """

    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, parents: tuple = (), op: str = "", requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad or bool(parents)

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Value":
        """Same payload, cut from the graph (stop-gradient)."""
        return Value(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.op!r}" if self.op else ""
        return f"Value({self.data!r}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = as_value(other)
        out = self.data + other.data
        return _make(out, "add", (self, lambda g: _unbroadcast(g, self.shape)),
                     (other, lambda g: _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, "neg", (self, lambda g: -g))

    def __sub__(self, other):
        return self + (-as_value(other))

    def __rsub__(self, other):
        return as_value(other) + (-self)

    def __mul__(self, other):
        other = as_value(other)
        a, b = self.data, other.data
        return _make(a * b, "mul", (self, lambda g: _unbroadcast(g * b, a.shape)),
                     (other, lambda g: _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_value(other)
        if not other.requires_grad:
            return self * (1.0 / other.data)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return as_value(other) * self ** -1.0

    def __pow__(self, exponent: float):
        if isinstance(exponent, Value):
            raise TypeError("only constant exponents are supported")
        p = float(exponent)
        x = self.data
        if p != int(p) and np.any(x < 0):
            raise DomainError("fractional power of a negative number")
        if p < 0 and np.any(x == 0):
            raise DomainError("negative power of zero")
        out = x ** p
        return _make(out, "pow", (self, lambda g: g * p * x ** (p - 1.0)))

    def __matmul__(self, other):
        return dot(self, other)

    def __rmatmul__(self, other):
        return dot(as_value(other), self)

    # ------------------------------------------------------------- structure
    def __getitem__(self, idx):
        x = self.data

        def vjp(g):
            full = np.zeros_like(x)
            np.add.at(full, idx, g)
            return full

        return _make(x[idx], "index", (self, vjp))

    @property
    def T(self) -> "Value":
        return _make(self.data.T, "transpose", (self, lambda g: g.T))

    def reshape(self, *shape) -> "Value":
        src = self.shape
        return _make(self.data.reshape(*shape), "reshape", (self, lambda g: g.reshape(src)))

    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        src = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, src).copy()

        return _make(self.data.sum(axis=axis, keepdims=keepdims), "sum", (self, vjp))

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data, op: str, *pairs) -> Value:
    tracked = tuple(p for p in pairs if p[0].requires_grad)
    return Value(data, tracked, op)


# ---------------------------------------------------------------- primitives
def dot(a, b) -> Value:
    """Matrix/vector product with numpy ``@`` semantics (1-D or 2-D operands)."""
    a, b = as_value(a), as_value(b)
    A, B = a.data, b.data
    if A.ndim == 0 or B.ndim == 0 or A.shape[-1] != B.shape[0]:
        raise GraphError(f"dot: incompatible shapes {A.shape} and {B.shape}")

    def vjp_a(g):
        if B.ndim == 1:
            return np.multiply.outer(g, B) if A.ndim == 2 else g * B
        return g @ B.T

    def vjp_b(g):
        if A.ndim == 1:
            return np.multiply.outer(A, g) if B.ndim == 2 else g * A
        return A.T @ g

    return _make(A @ B, "dot", (a, vjp_a), (b, vjp_b))


def exp(x) -> Value:
    x = as_value(x)
    out = np.exp(x.data)
    return _make(out, "exp", (x, lambda g: g * out))


def log(x) -> Value:
    x = as_value(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive number")
    d = x.data
    return _make(np.log(d), "log", (x, lambda g: g / d))


def max0(x) -> Value:
    """Hinge ``max(0, x)``; the local partial at exactly 0 is taken as 0."""
    x = as_value(x)
    on = x.data > 0
    return _make(np.where(on, x.data, 0.0), "max0", (x, lambda g: g * on))


def leaky_relu(x, slope: float = 0.01) -> Value:
    x = as_value(x)
    k = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * k, "leaky_relu", (x, lambda g: g * k))


def sigmoid(x) -> Value:
    x = as_value(x)
    d = x.data
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, "sigmoid", (x, lambda g: g * out * (1.0 - out)))


def tanh(x) -> Value:
    x = as_value(x)
    out = np.tanh(x.data)
    return _make(out, "tanh", (x, lambda g: g * (1.0 - out * out)))


def clip(x, lo: float, hi: float) -> Value:
    x = as_value(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), "clip", (x, lambda g: g * inside))


def logsumexp(x, axis=None, keepdims: bool = False, mask=None) -> Value:
    """Stable ``log(sum(exp(x)))``; entries where ``mask`` is False are excluded."""
    x = as_value(x)
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not np.all(mask.any(axis=axis)):
            raise DomainError("logsumexp over an empty set")
        d = np.where(mask, d, -np.inf)
    m = np.max(d, axis=axis, keepdims=True)
    e = np.exp(d - m)
    s = e.sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    soft = e / s

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return g * soft

    out = out_k if keepdims else (np.squeeze(out_k, axis=axis) if axis is not None else out_k.reshape(()))
    return _make(out, "logsumexp", (x, vjp))


def _erfinv_guess(y: np.ndarray) -> np.ndarray:
    # Giles (2010) single-precision polynomial, used only as a starting point
    w = -np.log((1.0 - y) * (1.0 + y))
    central = w < 5.0
    wc = w - 2.5
    p1 = 2.81022636e-08
    for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
              -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
        p1 = c + p1 * wc
    wt = np.sqrt(np.maximum(w, 5.0)) - 3.0
    p2 = -0.000200214257
    for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
              -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
        p2 = c + p2 * wt
    return np.where(central, p1, p2) * y


_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def erfinv_array(y) -> np.ndarray:
    """Inverse error function on plain arrays; raises outside (-1, 1)."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(~np.isfinite(y)) or np.any(np.abs(y) >= 1.0):
        raise DomainError("erfinv requires input strictly inside (-1, 1)")
    x = _erfinv_guess(y)
    for _ in range(2):
        x = x - (_erf(x) - y) / (_TWO_OVER_SQRT_PI * np.exp(-x * x))
    return x


def erfinv(y) -> Value:
    y = as_value(y)
    x = erfinv_array(y.data)
    slope = 1.0 / (_TWO_OVER_SQRT_PI * np.exp(-x * x))
    return _make(x, "erfinv", (y, lambda g: g * slope))


def concat(values: Iterable, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)
    pairs = []
    for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
        sl = [slice(None)] * v.ndim
        sl[axis] = slice(lo, hi)
        pairs.append((v, (lambda s: lambda g: g[s])(tuple(sl))))
    return _make(np.concatenate([v.data for v in values], axis=axis), "concat", *pairs)


def stack(values: Iterable) -> Value:
    values = [as_value(v) for v in values]
    pairs = [(v, (lambda i: lambda g: g[i])(i)) for i, v in enumerate(values)]
    return _make(np.stack([v.data for v in values]), "stack", *pairs)


# ------------------------------------------------------------------ backward
class Tape:
    """Topologically ordered view of the graph reachable from ``root``."""

    def __init__(self, root: Value):
        self.root = root
        self.nodes: list[Value] = self._toposort(root)

    @staticmethod
    def _toposort(root: Value) -> list[Value]:
        order: list[Value] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack: list[tuple[Value, int]] = [(root, 0)]
        while stack:
            node, i = stack.pop()
            if i == 0:
                if state.get(id(node)) == 2:
                    continue
                state[id(node)] = 1
            if i < len(node.parents):
                stack.append((node, i + 1))
                child = node.parents[i][0]
                s = state.get(id(child))
                if s == 1:
                    raise GraphError("cycle detected in computation graph")
                if s is None:
                    stack.append((child, 0))
            else:
                state[id(node)] = 2
                order.append(node)
        return order

    def backward(self) -> dict[Value, np.ndarray]:
        root = self.root
        if root.data.size != 1:
            raise GraphError("backward requires a scalar root")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.data)
        leaves: dict[Value, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            if not node.parents:
                leaves[node] = g
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib
        return leaves


def backward(root: Value) -> dict[Value, np.ndarray]:
    """Populate ``.grad`` on every node reachable from ``root``.

    Returns a mapping from each trainable leaf to d(root)/d(leaf).
    """
    if not root.requires_grad:
        return {}
    return Tape(root).backward()

