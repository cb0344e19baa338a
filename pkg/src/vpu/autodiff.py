"""Reverse-mode differentiation over scalar losses of a flat parameter vector.

A small tape: every operation produces a `Tensor` holding a float64 numpy
array, its parents, and a backward rule.  Calling `gradient` on a scalar
expression topologically replays the tape.  All arithmetic is 64-bit; any
non-finite intermediate raises `NumericError` naming the offending node.

`log` is guarded as log(max(x, floor)) with floor defaulting to 1e-12, so
losses stay bounded when a sigmoid output underflows; below the floor the
derivative is zero (consistent with the clamped forward value).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

LOG_FLOOR = 1e-12


class NumericError(ArithmeticError):
    """An intermediate value overflowed or became NaN."""


def _checked(value: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by node '{name}'")
    return value


def _quiet():
    return np.errstate(over="ignore", invalid="ignore", divide="ignore")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "parents", "_backward", "name", "grad")

    # keep numpy from absorbing `ndarray <op> Tensor`; defer to our dunders
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None, name="const"):
        self.value = _checked(np.asarray(value, dtype=np.float64), name)
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self._backward: Callable[[np.ndarray], None] | None = backward
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy(), name="detached")

    def item(self) -> float:
        return float(self.value)

    # -- graph construction ------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward requires a scalar output")
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
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary(name, a, b, forward, back_a, back_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with _quiet():  # overflow surfaces as NumericError, not a warning
        value = forward(a.value, b.value)

    def backward(g):
        a._accumulate(_unbroadcast(back_a(g, a.value, b.value), a.value.shape))
        b._accumulate(_unbroadcast(back_b(g, a.value, b.value), b.value.shape))

    return Tensor(value, (a, b), backward, name)


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    value = a.value @ b.value

    def backward(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    return Tensor(value, (a, b), backward, "matmul")


def log(a, floor: float = LOG_FLOOR) -> Tensor:
    """Guarded natural log: log(max(x, floor)); zero gradient below the floor."""
    a = as_tensor(a)
    clamped = np.maximum(a.value, floor)
    value = np.log(clamped)

    def backward(g):
        a._accumulate(g * np.where(a.value > floor, 1.0 / clamped, 0.0))

    return Tensor(value, (a,), backward, "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with _quiet():
        value = np.exp(a.value)

    def backward(g):
        a._accumulate(g * value)

    return Tensor(value, (a,), backward, "exp")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    value = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * value * (1.0 - value))

    return Tensor(value, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    value = np.tanh(a.value)

    def backward(g):
        a._accumulate(g * (1.0 - value * value))

    return Tensor(value, (a,), backward, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    value = np.maximum(a.value, 0.0)

    def backward(g):
        a._accumulate(g * (a.value > 0.0))

    return Tensor(value, (a,), backward, "relu")


def positive_part(a) -> Tensor:
    """max(0, x) with gradient flowing only through the selected branch."""
    t = relu(a)
    t.name = "positive_part"
    return t


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    value = a.value.mean()

    def backward(g):
        a._accumulate(np.full_like(a.value, float(g) / n))

    return Tensor(value, (a,), backward, "mean")


def total(a) -> Tensor:
    a = as_tensor(a)
    value = a.value.sum()

    def backward(g):
        a._accumulate(np.full_like(a.value, float(g)))

    return Tensor(value, (a,), backward, "sum")


def take(a, key) -> Tensor:
    a = as_tensor(a)
    value = a.value[key]

    def backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, key, g)
        a._accumulate(out)

    return Tensor(value, (a,), backward, "take")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    value = a.value.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.value.shape))

    return Tensor(value, (a,), backward, "reshape")


# -- flat parameter vectors ---------------------------------------------------


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    stop: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class ParameterVector:
    """Flat float64 weights plus a named-segment layout covering them."""

    values: np.ndarray
    layout: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64).ravel())
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")
        if self.layout:
            covered = 0
            for seg in sorted(self.layout, key=lambda s: s.start):
                if seg.start != covered:
                    raise ValueError("layout segments must be disjoint and contiguous")
                if seg.stop - seg.start != int(np.prod(seg.shape)):
                    raise ValueError(f"segment {seg.name} shape does not match its span")
                covered = seg.stop
            if covered != self.values.size:
                raise ValueError("layout does not cover the parameter vector")

    def __len__(self) -> int:
        return self.values.size

    def segment(self, name: str) -> Segment:
        for seg in self.layout:
            if seg.name == name:
                return seg
        raise KeyError(name)

    def view(self, name: str) -> np.ndarray:
        seg = self.segment(name)
        return self.values[seg.start:seg.stop].reshape(seg.shape)

    def replaced(self, values: np.ndarray) -> "ParameterVector":
        return replace(self, values=values)


LossFn = Callable[[Tensor], Tensor]


def evaluate(loss_fn: LossFn, params: ParameterVector) -> float:
    """Scalar value of the expression at `params`; deterministic."""
    out = loss_fn(Tensor(params.values.copy(), name="params"))
    if out.value.size != 1:
        raise ValueError("loss expression must be scalar")
    return float(out.value)


def value_and_gradient(loss_fn: LossFn, params: ParameterVector) -> tuple[float, np.ndarray]:
    leaf = Tensor(params.values.copy(), name="params")
    out = loss_fn(leaf)
    if out.value.size != 1:
        raise ValueError("loss expression must be scalar")
    out.backward()
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    return float(out.value), _checked(grad, "gradient")


def gradient(loss_fn: LossFn, params: ParameterVector) -> np.ndarray:
    """Exact reverse-mode derivatives of the scalar loss at `params`."""
    return value_and_gradient(loss_fn, params)[1]


def finite_diff_gradient(loss_fn: LossFn, params: ParameterVector,
                         step: float = 1e-6) -> np.ndarray:
    """Central differences (L(x+h e_i) - L(x-h e_i)) / 2h, per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    base = params.values
    grad = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + step
        hi = evaluate(loss_fn, params.replaced(bumped))
        bumped[i] = base[i] - step
        lo = evaluate(loss_fn, params.replaced(bumped))
        grad[i] = (hi - lo) / (2.0 * step)
    return grad
