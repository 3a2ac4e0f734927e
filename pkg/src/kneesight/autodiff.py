"""Array-valued automatic differentiation.

Two complementary modes share one set of operator functions so a network's
forward pass is written once and evaluated on plain arrays, on ``Var`` (reverse
mode, for parameter gradients) or on ``Jet`` (truncated second-order forward
mode, for exact first and second input derivatives).
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in a reverse-mode computation graph holding an ndarray value."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, value, parents: tuple["Var", ...] = (), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad: np.ndarray | None = None
        self._parents = parents
        # maps the upstream gradient to one gradient per parent
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        other = _as_var(other)
        a_shape, b_shape = self.shape, other.shape
        return Var(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_var(other))

    def __rsub__(self, other):
        return _as_var(other) + (-self)

    def __mul__(self, other):
        other = _as_var(other)
        a, b = self.value, other.value
        return Var(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported")
        return self * (1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other):
        other = _as_var(other)
        a, b = self.value, other.value
        return Var(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    def __rmatmul__(self, other):
        return _as_var(other) @ self

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Var(self.value.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self):
        return self.sum() * (1.0 / self.value.size)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                parent.grad = g if parent.grad is None else parent.grad + g


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


class Jet:
    """Second-order Taylor jet ``(v, v', v'')`` along one input direction.

    Arithmetic follows the chain rule truncated at order two, which is exact
    for first and second directional derivatives (nested dual numbers with a
    repeated direction).
    """

    __slots__ = ("v", "d1", "d2")
    __array_priority__ = 100.0

    def __init__(self, v, d1, d2):
        self.v = np.asarray(v, dtype=float)
        self.d1 = np.asarray(d1, dtype=float)
        self.d2 = np.asarray(d2, dtype=float)

    @classmethod
    def seed(cls, x: np.ndarray, direction: np.ndarray) -> "Jet":
        x = np.asarray(x, dtype=float)
        return cls(x, np.broadcast_to(direction, x.shape).copy(), np.zeros_like(x))

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.v + other.v, self.d1 + other.d1, self.d2 + other.d2)
        return Jet(self.v + other, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(
                self.v * other.v,
                self.d1 * other.v + self.v * other.d1,
                self.d2 * other.v + 2.0 * self.d1 * other.d1 + self.v * other.d2,
            )
        return Jet(self.v * other, self.d1 * other, self.d2 * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            raise TypeError("division by a Jet is not supported")
        return self * (1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other):
        if isinstance(other, Jet):
            raise TypeError("Jet @ Jet is not needed for input derivatives")
        return Jet(self.v @ other, self.d1 @ other, self.d2 @ other)

    def sum(self, axis=None, keepdims: bool = False):
        return Jet(
            self.v.sum(axis=axis, keepdims=keepdims),
            self.d1.sum(axis=axis, keepdims=keepdims),
            self.d2.sum(axis=axis, keepdims=keepdims),
        )

    def _apply(self, f, df, d2f):
        return Jet(f, df * self.d1, d2f * self.d1**2 + df * self.d2)


def sin(x):
    if isinstance(x, Var):
        v = x.value
        return Var(np.sin(v), (x,), lambda g: (g * np.cos(v),))
    if isinstance(x, Jet):
        s = np.sin(x.v)
        return x._apply(s, np.cos(x.v), -s)
    return np.sin(x)


def cos(x):
    if isinstance(x, Var):
        v = x.value
        return Var(np.cos(v), (x,), lambda g: (-g * np.sin(v),))
    if isinstance(x, Jet):
        c = np.cos(x.v)
        return x._apply(c, -np.sin(x.v), -c)
    return np.cos(x)


def tanh(x):
    if isinstance(x, Var):
        t = np.tanh(x.value)
        return Var(t, (x,), lambda g: (g * (1.0 - t * t),))
    if isinstance(x, Jet):
        t = np.tanh(x.v)
        dt = 1.0 - t * t
        return x._apply(t, dt, -2.0 * t * dt)
    return np.tanh(x)


def exp(x):
    if isinstance(x, Var):
        e = np.exp(x.value)
        return Var(e, (x,), lambda g: (g * e,))
    if isinstance(x, Jet):
        e = np.exp(x.v)
        return x._apply(e, e, e)
    return np.exp(x)


def square(x):
    return x * x


def concat(parts, axis: int = -1):
    """Concatenate along ``axis``; mixes of plain arrays and one node type are allowed."""
    if any(isinstance(p, Var) for p in parts):
        parts = [_as_var(p) for p in parts]
        sizes = [p.shape[axis] for p in parts]
        cuts = np.cumsum(sizes)[:-1]
        return Var(
            np.concatenate([p.value for p in parts], axis=axis),
            tuple(parts),
            lambda g: tuple(np.split(g, cuts, axis=axis)),
        )
    if any(isinstance(p, Jet) for p in parts):
        jets = [p if isinstance(p, Jet) else Jet(p, np.zeros_like(p), np.zeros_like(p)) for p in parts]
        return Jet(
            np.concatenate([j.v for j in jets], axis=axis),
            np.concatenate([j.d1 for j in jets], axis=axis),
            np.concatenate([j.d2 for j in jets], axis=axis),
        )
    return np.concatenate(parts, axis=axis)


def value_of(x) -> np.ndarray:
    if isinstance(x, Var):
        return x.value
    if isinstance(x, Jet):
        return x.v
    return np.asarray(x)
