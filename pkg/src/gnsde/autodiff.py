"""Dense float64 tensors with a reverse-mode gradient tape.

Every op records its output together with its parents and a backward rule.
Recording order is a global counter, so sorting the reachable records by that
counter gives a valid reverse topological order for :meth:`Tensor.backward`.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "ShapeError",
    "DomainError",
    "no_grad",
    "grad_enabled",
    "record",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "tanh",
    "relu",
    "exp",
    "log",
    "square",
    "matmul",
    "add_row",
    "concat_cols",
    "tsum",
    "mean",
    "gather",
    "softmax_rows",
    "cross_entropy",
    "Adam",
    "glorot_uniform",
]


class NonFiniteError(FloatingPointError):
    """A tensor would hold NaN or infinite values."""


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class DomainError(ValueError):
    """An op was evaluated outside its mathematical domain."""


_ids = itertools.count()
_GRAD_ON = True


def grad_enabled() -> bool:
    return _GRAD_ON


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them."""
    global _GRAD_ON
    prev = _GRAD_ON
    _GRAD_ON = False
    try:
        yield
    finally:
        _GRAD_ON = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError("tensor extents must be positive")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("root tensor is not attached to the tape")
        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in nodes:
                continue
            nodes[t._id] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        pending = {self._id: np.ones_like(self.data)}
        for key in sorted(nodes, reverse=True):
            t = nodes[key]
            g = pending.pop(key, None)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g
            if t._backward is None:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = pending.get(p._id)
                pending[p._id] = pg if prev is None else prev + pg

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str = "op") -> Tensor:
    """Wrap an op result; attach it to the tape when any parent needs grads.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_ids)
    out.requires_grad = _GRAD_ON and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # scalar broadcast only
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "add")
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "sub")
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "mul")
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return record(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,), "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return record(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise DomainError("log of non-positive input")
    x = a.data
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return record(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with the bias row repeated over every row of ``x``."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_row: bias {b.shape} does not fit {x.shape}")
    return record(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_row")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_lift(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError("concat_cols: all parts must be matrices with equal rows")
    cuts = np.cumsum([p.shape[1] for p in parts])[:-1]
    return record(
        np.concatenate([p.data for p in parts], axis=1),
        parts,
        lambda g: tuple(np.split(g, cuts, axis=1)),
        "concat_cols",
    )


def tsum(a: Tensor) -> Tensor:
    return record(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.data.size)


def gather(x: Tensor, index: tuple) -> Tensor:
    """Select ``x[index]`` (numpy fancy indexing); gradients scatter back."""
    picked = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return record(np.array(picked, dtype=np.float64), (x,), back, "gather")


def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows expects a matrix")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record(p, (x,), back, "softmax_rows")


_PROB_FLOOR = 1e-300


def cross_entropy(probs: Tensor, labels, mask=None) -> Tensor:
    """Mean of ``-log probs[i, labels[i]]`` over the masked rows."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("cross_entropy: empty mask")
    cols = labels[rows]
    if cols.min() < 0 or cols.max() >= c:
        raise ValueError("cross_entropy: label outside [0, num_classes)")
    p = np.maximum(probs.data[rows, cols], _PROB_FLOOR)
    m = rows.size

    def back(g):
        full = np.zeros_like(probs.data)
        full[rows, cols] = -float(g) / (m * p)
        return (full,)

    return record(np.asarray(-np.log(p).mean()), (probs,), back, "cross_entropy")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


class Adam:
    """Adam with bias correction; moment buffers live on the optimizer."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [p.name or str(i) for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValueError(f"adam_step: no gradient for {', '.join(missing)}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
