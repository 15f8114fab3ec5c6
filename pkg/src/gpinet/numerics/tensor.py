"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive op whose inputs require gradients,
in creation order. Creation order is already a topological order of the
computation graph, so the backward pass is a single reverse sweep over the
tape that visits each node exactly once.

Outside an active tape, ops are evaluated eagerly and nothing is recorded.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from gpinet.errors import ContractError, NumericError, ShapeError

_state = threading.local()


def _tapes():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


_default_dtype = np.float64


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    """Select float64 (default) or float32 for newly created tensors."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ContractError(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """An ndarray plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable ops, used as a context manager.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> [g.tolist() for g in tape.backward(loss, [w])]
    [[2.0, 4.0]]
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().pop()
        return False

    def record(self, node):
        self.nodes.append(node)

    def backward(self, loss, params):
        return backward(self, loss, params)


def active_tape():
    stack = _tapes()
    return stack[-1] if stack else None


def make_op(data, parents, vjp, op="custom"):
    """Wrap ``data`` as the output of an op over ``parents``.

    ``vjp(g)`` receives the upstream gradient (same shape as ``data``) and
    returns one gradient per parent, shaped like that parent's data or
    broadcast-compatible with it. ``None`` entries mean "no contribution".
    Raises :class:`NumericError` if ``data`` is not finite.
    """
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        tape.record(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(tape, loss, params):
    """Reverse sweep over ``tape`` from scalar ``loss``.

    Returns one gradient array per entry of ``params``. Parameters that the
    loss does not depend on get zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in tape.nodes:
        node.grad = None
    for p in params:
        p.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        pgrads = node._vjp(g)
        for parent, pg in zip(node._parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg), parent.data.shape)
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg
    grads = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)
             for p in params]
    for node in tape.nodes:
        node.grad = None
    return grads


# elementwise binary ops (numpy broadcasting; gradients reduced back)

def _operands(a, b):
    """Constants take the dtype of their tensor partner so float32 stays float32."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _operands(a, b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _operands(a, b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _operands(a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b):
    a, b = _operands(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def neg(a):
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(x, w):
    """``x[..., k] @ w[k, m]``; leading axes of ``x`` are batch axes."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data

    def vjp(g):
        k, m = wd.shape
        gx = g @ wd.T
        gw = xd.reshape(-1, k).T @ g.reshape(-1, m)
        return gx, gw

    return make_op(xd @ wd, (x, w), vjp, "matmul")


def linear(x, w, b):
    """Fused ``x @ w + b`` with ``b`` of shape ``(m,)``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: {x.shape} @ {w.shape} + {b.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if out.dtype == np.result_type(out, b.data):
        out += b.data
    else:
        out = out + b.data  # promote rather than silently downcast a wider bias

    def vjp(g):
        k, m = wd.shape
        g2 = g.reshape(-1, m)
        return g @ wd.T, xd.reshape(-1, k).T @ g2, g2.sum(axis=0)

    return make_op(out, (x, w, b), vjp, "linear")


# unary ops

def relu(a):
    mask = a.data > 0
    return make_op(np.maximum(a.data, 0), (a,), lambda g: (g * mask,), "relu")


def exp(a):
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return make_op(out, (a,), lambda g: (g / ad,), "log")


def tanh(a):
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# reductions and shape ops

def tsum(a, axis=None, keepdims=False):
    shape = a.data.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_op(np.asarray(out), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    old = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return make_op(out, (a,), lambda g: (g.reshape(old),), "reshape")


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return make_op(out, (a,), lambda g: (g,), "broadcast_to")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_op(out, tuple(tensors), vjp, "concat")


def getitem(a, index):
    shape = a.data.shape
    out = a.data[index]

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(out), (a,), vjp, "getitem")


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), vjp, "softmax")


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy over all leading positions.

    ``logits`` has shape ``(..., C)``; ``targets`` holds integer classes with
    shape ``logits.shape[:-1]``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} vs logits {logits.shape}")
    num_classes = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise ContractError("target class out of range")
    flat = logits.data.reshape(-1, num_classes)
    t = targets.reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(t))
    count = max(len(t), 1)
    loss = (logz - shifted[rows, t]).sum() / count

    def vjp(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, t] -= 1.0
        return ((g / count) * p.reshape(logits.data.shape),)

    return make_op(np.asarray(loss, dtype=flat.dtype), (logits,), vjp, "cross_entropy")
