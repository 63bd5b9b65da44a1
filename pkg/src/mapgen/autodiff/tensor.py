"""Dense float64 tensors with reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When at least one input requires a
gradient, the output records its parents and a closure mapping the upstream
gradient to one gradient per parent. :meth:`Tensor.backward` walks that graph
in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised when backward is called on something that is not a scalar loss."""


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            or data.dtype != np.float64 else data
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -------------------------------------------------------------- backward
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -------------------------------------------------------------- operators
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ------------------------------------------------------------------ elementwise
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    return _result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = _wrap(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,))


def sin(a) -> Tensor:
    a = _wrap(a)
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = _wrap(a)
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def atan2(y, x) -> Tensor:
    """Elementwise ``atan2(y, x)``; the gradient at the origin is defined as 0."""
    y, x = _wrap(y), _wrap(x)
    out = np.arctan2(y.data, x.data)

    def backward(g):
        r2 = x.data * x.data + y.data * y.data
        safe = np.where(r2 > 0, r2, 1.0)
        gy = np.where(r2 > 0, x.data / safe, 0.0) * g
        gx = np.where(r2 > 0, -y.data / safe, 0.0) * g
        return unbroadcast(gy, y.shape), unbroadcast(gx, x.shape)

    return _result(out, (y, x), backward)


def maximum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    pick_a = a.data >= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b),
                   lambda g: (unbroadcast(g * pick_a, a.shape),
                              unbroadcast(g * ~pick_a, b.shape)))


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    pick_a = a.data <= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b),
                   lambda g: (unbroadcast(g * pick_a, a.shape),
                              unbroadcast(g * ~pick_a, b.shape)))


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` (a constant boolean array) holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _wrap(a), _wrap(b)
    return _result(np.where(cond, a.data, b.data), (a, b),
                   lambda g: (unbroadcast(np.where(cond, g, 0.0), a.shape),
                              unbroadcast(np.where(cond, 0.0, g), b.shape)))


# ------------------------------------------------------------------ reductions
def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g: np.ndarray, axes: tuple, keepdims: bool, shape: tuple) -> np.ndarray:
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return _result(np.asarray(out, dtype=np.float64), (a,),
                   lambda g: (_expand(g, axes, keepdims, a.shape),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / max(count, 1)
    return _result(np.asarray(out, dtype=np.float64), (a,),
                   lambda g: (_expand(g / max(count, 1), axes, keepdims, a.shape),))


def max_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    a = _wrap(a)
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(np.argmax(flat))
        out = flat[idx]

        def backward_all(g):
            grad = np.zeros(flat.shape)
            grad[idx] = float(np.sum(g))
            return (grad.reshape(a.shape),)

        return _result(np.asarray(out).reshape((1,) * a.ndim if keepdims else ()), (a,),
                       backward_all)
    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax)
    if not keepdims:
        out = np.squeeze(out, ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        grad = np.zeros(a.shape)
        np.put_along_axis(grad, np.expand_dims(idx, ax), g, axis=ax)
        return (grad,)

    return _result(out, (a,), backward)


# ------------------------------------------------------------------ shape ops
def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = _wrap(a)
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in parts)


def getitem(a, key) -> Tensor:
    """Slice or gather; repeated gather indices accumulate their gradients."""
    a = _wrap(a)
    if isinstance(key, Tensor):
        key = key.data.astype(np.int64)
    out = a.data[key]
    basic = _is_basic(key)

    def backward(g):
        grad = np.zeros(a.shape)
        if basic:
            grad[key] += g
        else:
            np.add.at(grad, key, g)
        return (grad,)

    return _result(np.array(out, dtype=np.float64), (a,), backward)


def concat(ts: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in ts]
    if not ts:
        raise ShapeError("concat of an empty list")
    if len(ts) == 1:
        return ts[0]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: {ref} vs {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return _result(out, ts, lambda g: tuple(np.split(g, sizes, axis=ax)))


def stack(ts: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in ts]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in ts]
    return concat(expanded, axis=axis)


def broadcast_to(a, shape) -> Tensor:
    a = _wrap(a)
    return _result(np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (unbroadcast(g, a.shape),))


# ------------------------------------------------------------------ linear algebra
def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} "
                         "do not broadcast") from exc
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def custom(data: np.ndarray, parents: Iterable, backward: Callable) -> Tensor:
    """Build a node from precomputed ``data`` and a hand-written backward."""
    return _result(np.asarray(data, dtype=np.float64), tuple(_wrap(p) for p in parents),
                   backward)
