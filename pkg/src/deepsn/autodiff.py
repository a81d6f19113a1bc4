"""A small reverse-mode autodiff over numpy arrays.

Only the primitives the sheaf network needs are provided.  Every op records
its parents and a closure that maps the output adjoint to parent adjoints;
:func:`backward` replays the recorded nodes in reverse topological order.

    >>> w = Tensor(np.eye(2), requires_grad=True)
    >>> x = constant([1.0, 2.0])
    >>> loss = ((w @ x) ** 2).sum()
    >>> backward(loss)
    >>> w.grad
    array([[2., 4.],
           [4., 8.]])
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the reflected Tensor op

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if k != 2:
            raise NotImplementedError("only squaring is supported")
        return mul(self, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _node(value, parents, backward_fn) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def custom(value, parents, backward_fn) -> Tensor:
    """Record a node whose adjoint is supplied by the caller."""
    return _node(np.asarray(value, dtype=float), tuple(parents), backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)))


_kink_log: list | None = None


class watch_kinks:
    """Context manager recording the smallest |argument| seen by :func:`absolute`."""

    def __enter__(self):
        global _kink_log
        self._saved, _kink_log = _kink_log, []
        self.log = _kink_log
        return self

    def __exit__(self, *exc):
        global _kink_log
        _kink_log = self._saved
        return False

    @property
    def closest(self) -> float:
        return min(self.log, default=np.inf)


def absolute(a) -> Tensor:
    # subgradient 0 at the kink
    if _kink_log is not None and a.value.size:
        _kink_log.append(float(np.min(np.abs(a.value))))
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def exp(a) -> Tensor:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def sigmoid(a) -> Tensor:
    out = _sigmoid(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    x = a.value
    out = np.logaddexp(0.0, x)
    return _node(out, (a,), lambda g: (g * _sigmoid(x),))


def tanh(a) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def maximum(a, c: float) -> Tensor:
    """Elementwise max with a constant floor; gradient passes where a > c."""
    mask = a.value > c
    return _node(np.where(mask, a.value, c), (a,), lambda g: (g * mask,))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sum_(a, axis=None, keepdims=False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(out, (a,), back)


def reshape(a, shape) -> Tensor:
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, i=-1, j=-2) -> Tensor:
    return _node(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a, idx) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _node(a.value[idx], (a,), back)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def _scatter_matrix(idx: np.ndarray, size: int) -> sp.csr_matrix:
    return sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(size, idx.size))


def _scatter(values: np.ndarray, idx: np.ndarray, size: int, ax: int) -> np.ndarray:
    """Sum slices of ``values`` along ``ax`` into ``size`` slots keyed by ``idx``."""
    moved = np.moveaxis(values, ax, 0)
    rest = moved.shape[1:]
    flat = _scatter_matrix(idx, size) @ moved.reshape(idx.size, -1)
    return np.moveaxis(np.asarray(flat).reshape((size,) + rest), 0, ax)


def take(a, idx, axis: int = 0) -> Tensor:
    """Gather along ``axis``; the adjoint scatters with accumulation."""
    idx = np.asarray(idx, dtype=np.int64)
    ax = axis % a.ndim
    size = a.shape[ax]
    return _node(np.take(a.value, idx, axis=ax), (a,), lambda g: (_scatter(g, idx, size, ax),))


def index_add(a, idx, size: int, axis: int = 0) -> Tensor:
    """Scatter-add slices of ``a`` into ``size`` slots along ``axis``."""
    idx = np.asarray(idx, dtype=np.int64)
    ax = axis % a.ndim
    return _node(_scatter(a.value, idx, size, ax), (a,), lambda g: (np.take(g, idx, axis=ax),))


def bmm(a, b) -> Tensor:
    """Batched matrix product over the last two axes, with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("bmm needs operands with at least two axes")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            if a.ndim == 2 and b.ndim > 2:  # shared left matrix: contract the batch axes directly
                axes = list(range(g.ndim - 2)) + [g.ndim - 1]
                ga = np.tensordot(g, b.value, axes=(axes, axes))
            else:
                ga = _unbroadcast(g @ np.ascontiguousarray(np.swapaxes(b.value, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                gb = a.value.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(a.value @ b.value, (a, b), back)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum without repeated or operand-private summed indices."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_s = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s) or any(c not in out_s and c not in other for c in s):
            raise ValueError(f"unsupported einsum {spec!r}")
    value = np.einsum(spec, a.value, b.value, optimize=True)

    def back(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, b.value, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_s},{sa}->{sb}", g, a.value, optimize=True) if b.requires_grad else None
        return ga, gb

    return _node(value, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim == 1:
        letters = "abcdefgh"[: a.ndim - 1]
        return einsum(f"{letters}j,j->{letters}", a, b)
    if b.ndim != 2:
        raise ValueError("right operand of matmul must be a vector or matrix")
    letters = "abcdefgh"[: a.ndim - 1]
    return einsum(f"{letters}j,jk->{letters}k", a, b)


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, seed=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any parameter")
    if seed is None and loss.value.size != 1:
        raise ValueError("backward needs a scalar loss or an explicit seed adjoint")
    grads = {id(loss): np.ones_like(loss.value) if seed is None else np.asarray(seed, dtype=float)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
