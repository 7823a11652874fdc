"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation records a backward closure on the output tensor; calling
`backward()` on a scalar runs the closures in reverse topological order.
All math is float64: the gradient contracts this core is tested against
(finite differences at 1e-5 relative error) are not reachable in float32.

Gradient propagation can be switched off wholesale with `no_grad()`
(used during decoding), which makes every op return a leaf.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # --- op helpers ---

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...],
                backward: Callable[["Tensor"], Callable[[], None]]) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED:
            out._parents = parents
            out._backward = backward(out)
        return out

    # --- arithmetic ---

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other

        def make(out):
            def back():
                a._accumulate(_unbroadcast(out.grad, a.data.shape))
                b._accumulate(_unbroadcast(out.grad, b.data.shape))
            return back
        return self._result(a.data + b.data, (a, b), make)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def make(out):
            def back():
                a._accumulate(-out.grad)
            return back
        return self._result(-a.data, (a,), make)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other

        def make(out):
            def back():
                a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
                b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))
            return back
        return self._result(a.data * b.data, (a, b), make)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other

        def make(out):
            def back():
                a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
                b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data),
                                           b.data.shape))
            return back
        return self._result(a.data / b.data, (a, b), make)

    def __matmul__(self, other):
        a, b = self, other

        def make(out):
            def back():
                ga = out.grad @ np.swapaxes(b.data, -1, -2)
                gb = np.swapaxes(a.data, -1, -2) @ out.grad
                a._accumulate(_unbroadcast(ga, a.data.shape))
                b._accumulate(_unbroadcast(gb, b.data.shape))
            return back
        return self._result(a.data @ b.data, (a, b), make)

    def pow_const(self, exponent: float):
        a = self

        def make(out):
            def back():
                a._accumulate(out.grad * exponent * a.data ** (exponent - 1))
            return back
        return self._result(a.data ** exponent, (a,), make)

    # --- nonlinearities ---

    def tanh(self):
        a = self
        y = np.tanh(a.data)

        def make(out):
            def back():
                a._accumulate(out.grad * (1.0 - out.data ** 2))
            return back
        return self._result(y, (a,), make)

    def sigmoid(self):
        a = self
        y = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))

        def make(out):
            def back():
                a._accumulate(out.grad * out.data * (1.0 - out.data))
            return back
        return self._result(y, (a,), make)

    def relu(self):
        a = self

        def make(out):
            def back():
                a._accumulate(out.grad * (a.data > 0))
            return back
        return self._result(np.maximum(a.data, 0.0), (a,), make)

    def exp(self):
        a = self

        def make(out):
            def back():
                a._accumulate(out.grad * out.data)
            return back
        return self._result(np.exp(a.data), (a,), make)

    def log(self):
        a = self

        def make(out):
            def back():
                a._accumulate(out.grad / a.data)
            return back
        return self._result(np.log(a.data), (a,), make)

    # --- reductions and softmax ---

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def make(out):
            def back():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return back
        return self._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), make)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def make(out):
            def back():
                g = out.grad
                dot = (g * out.data).sum(axis=axis, keepdims=True)
                a._accumulate(out.data * (g - dot))
            return back
        return self._result(y, (a,), make)

    def log_softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse

        def make(out):
            def back():
                g = out.grad
                soft = np.exp(out.data)
                a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))
            return back
        return self._result(y, (a,), make)

    # --- shape ops ---

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def make(out):
            def back():
                a._accumulate(out.grad.reshape(a.data.shape))
            return back
        return self._result(a.data.reshape(shape), (a,), make)

    def swapaxes(self, ax1: int, ax2: int):
        a = self

        def make(out):
            def back():
                a._accumulate(out.grad.swapaxes(ax1, ax2))
            return back
        return self._result(a.data.swapaxes(ax1, ax2), (a,), make)

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, key):
        a = self

        def make(out):
            def back():
                g = np.zeros_like(a.data)
                np.add.at(g, key, out.grad)
                a._accumulate(g)
            return back
        return self._result(a.data[key], (a,), make)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]

    def make(out):
        def back():
            start = 0
            for t, size in zip(tensors, sizes):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(start, start + size)
                t._accumulate(out.grad[tuple(idx)])
                start += size
        return back
    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis),
                          tuple(tensors), make)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def make(out):
        def back():
            grads = np.moveaxis(out.grad, axis, 0)
            for t, g in zip(tensors, grads):
                t._accumulate(g)
        return back
    return Tensor._result(np.stack([t.data for t in tensors], axis=axis),
                          tuple(tensors), make)


def rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: gather rows of `table` by an integer id array."""
    ids = np.asarray(ids)

    def make(out):
        def back():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            table._accumulate(g)
        return back
    return Tensor._result(table.data[ids], (table,), make)


def parameter(shape, rng: np.random.Generator, scale: float = 0.1) -> Tensor:
    """Trainable tensor initialized uniform[-scale, scale]."""
    t = Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)
    return t


def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor],
               epsilon: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central finite
    differences of the scalar `fn()` over every scalar in `params`.

    The step per scalar x is epsilon * max(1, |x|); relative error is
    |fd - analytic| / max(|fd| + |analytic|, 1e-6).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            x = flat[i]
            eps = epsilon * max(1.0, abs(x))
            flat[i] = x + eps
            up = fn().item()
            flat[i] = x - eps
            dn = fn().item()
            flat[i] = x
            fd = (up - dn) / (2.0 * eps)
            rel = abs(fd - gflat[i]) / max(abs(fd) + abs(gflat[i]), 1e-6)
            worst = max(worst, rel)
    return worst
