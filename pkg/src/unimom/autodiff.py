"""Dense float64 tensors with taped reverse-mode differentiation.

Small enough to audit end to end: every differentiable operation appends one
entry to the active tape, and each entry carries an explicit backward closure.
Everything is 64-bit; the networks trained here are small and the gradient
checker needs the precision.

Broadcasting is deliberately restricted to two cases, plus explicit column
replication via :func:`repeat_cols`:

* a size-1 operand against anything (scalar broadcast), and
* a lower-rank operand whose shape matches the trailing axes of the other
  (e.g. adding a ``(k,)`` bias to an ``(n, k)`` matrix).

Tapes are per-thread.  Independent graphs may run on separate threads as long
as they do not share a tape or tensors.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "ShapeError",
    "Tape",
    "Tensor",
    "custom_op",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "softmax",
    "maximum",
    "minimum",
    "mean",
    "std",
    "concat",
    "reshape",
    "repeat_cols",
]


class ShapeError(ValueError):
    """Operand shapes incompatible for the requested operation."""


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    """The innermost open tape on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._from_op = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values that never receives gradient."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; every arithmetic path funnels through the module ops
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


class _Entry:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of forward operations for one reverse sweep.

    Entries are appended in execution order, so inputs always precede the
    operations that consume them; the backward pass simply walks the list in
    reverse.  Leaf tensors (requires_grad, not produced by a taped op) are
    registered as they are first seen so that ``backward`` can hand back a
    gradient, zero if unreached, for every parameter.
    """

    def __init__(self):
        self._entries: list[_Entry] = []
        self._leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._entries)

    def _record(self, inputs, output, backward_fn):
        for t in inputs:
            if t.requires_grad and not t._from_op and id(t) not in self._leaf_ids:
                self._leaf_ids.add(id(t))
                self._leaves.append(t)
        output._from_op = True
        self._entries.append(_Entry(inputs, output, backward_fn))

    def backward(self, loss: Tensor, wrt=None):
        """Accumulate d(loss)/d(leaf) for every recorded leaf.

        Sets ``.grad`` on each leaf tensor and, when ``wrt`` is given, returns
        the gradients for exactly those tensors in order (zeros for tensors
        the loss does not depend on).  ``loss`` must be a scalar produced
        through operations recorded on this tape.
        """
        if not self._entries:
            raise RuntimeError("backward on an empty tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self._entries):
            g_out = grads.pop(id(entry.output), None)
            if g_out is None:
                continue
            for t, g in zip(entry.inputs, entry.backward_fn(g_out)):
                if g is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                if acc is None:
                    grads[id(t)] = g
                else:
                    grads[id(t)] = acc + g

        for leaf in self._leaves:
            leaf.grad = grads.get(id(leaf), np.zeros_like(leaf.data))
        if wrt is None:
            return {id(l): l.grad for l in self._leaves}
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, inputs, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad:
        tape = active_tape()
        if tape is not None:
            tape._record(inputs, out, backward_fn)
    return out


def custom_op(data, inputs, backward_fn) -> Tensor:
    """Record an externally computed operation on the active tape.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input,
    each matching that input's shape.  Lets callers fuse multi-step kernels,
    such as a whole recurrent sweep, into a single tape entry.
    """
    return _emit(data, tuple(_as_tensor(t) for t in inputs), backward_fn)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or a.data.size == 1 or b.data.size == 1:
        return
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "add")
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "sub")
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "mul")
    da, db = a.data, b.data

    def backward(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return _emit(da * db, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("division by exact zero")
    da, db = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / db, da.shape),
            _unbroadcast(-g * da / (db * db), db.shape),
        )

    return _emit(da / db, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    da, db = a.data, b.data

    def backward(g):
        return g @ db.T, da.T @ g

    return _emit(da @ db, (a, b), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive input")
    da = a.data
    return _emit(np.log(da), (a,), lambda g: (g / da,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt of negative input")
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g / (2.0 * out),))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.data)
    return _emit(np.abs(a.data), (a,), lambda g: (g * sign,))


def softmax(a) -> Tensor:
    """Row-stabilised softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _emit(out, (a,), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient is routed to the second operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "maximum")
    take_a = a.data > b.data
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), sa),
            _unbroadcast(np.where(take_a, 0.0, g), sb),
        )

    return _emit(np.maximum(a.data, b.data), (a, b), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the gradient is routed to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "minimum")
    take_a = a.data <= b.data
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), sa),
            _unbroadcast(np.where(take_a, 0.0, g), sb),
        )

    return _emit(np.minimum(a.data, b.data), (a, b), backward)


def _axis_count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    return shape[axis]


def _expand_like(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    n = _axis_count(shape, axis)

    def backward(g):
        return (_expand_like(g, shape, axis, keepdims) / n,)

    return _emit(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def std(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation (no Bessel correction).

    Where the deviation is exactly zero the gradient is defined as zero;
    callers that divide by a volatility floor the result first, which routes
    the incoming gradient away from this op anyway.
    """
    a = _as_tensor(a)
    data = a.data
    shape = data.shape
    n = _axis_count(shape, axis)
    mu = data.mean(axis=axis, keepdims=True)
    centered = data - mu
    sigma_keep = np.sqrt((centered * centered).mean(axis=axis, keepdims=True))
    out = data.std(axis=axis, keepdims=keepdims)

    def backward(g):
        g_full = _expand_like(g, shape, axis, keepdims)
        safe = np.where(sigma_keep == 0.0, 1.0, sigma_keep)
        grad = g_full * centered / (n * safe)
        return (np.where(sigma_keep == 0.0, 0.0, grad),)

    return _emit(np.asarray(out), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            slicer[axis] = slice(int(lo), int(hi))
            pieces.append(g[tuple(slicer)])
        return tuple(pieces)

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def repeat_cols(a, k: int) -> Tensor:
    """Replicate a trailing size-1 axis k times; backward sums it back."""
    a = _as_tensor(a)
    if a.data.shape[-1] != 1:
        raise ShapeError(f"repeat_cols expects trailing axis 1, got {a.data.shape}")
    return _emit(
        np.repeat(a.data, k, axis=-1),
        (a,),
        lambda g: (g.sum(axis=-1, keepdims=True),),
    )


def getitem(a, key) -> Tensor:
    """Basic (view-producing) indexing with scatter-add backward."""
    a = _as_tensor(a)
    shape = a.data.shape

    def backward(g):
        z = np.zeros(shape)
        z[key] += g
        return (z,)

    return _emit(a.data[key], (a,), backward)
