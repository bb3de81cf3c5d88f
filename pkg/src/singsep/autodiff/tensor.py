"""Tensors and the gradient tape.

Operations only record themselves while a :class:`Tape` is active and at
least one input requires a gradient. Everything else runs as plain numpy,
which is how frozen networks are evaluated.
"""

import itertools
import threading

import numpy as np

_ids = itertools.count()
_local = threading.local()
_debug = {"check_finite": False}


class ContractError(ValueError):
    """An operation was called with arguments outside its contract."""


def set_debug(check_finite=True):
    """Toggle NaN/Inf detection on every recorded operation output."""
    _debug["check_finite"] = bool(check_finite)


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A real array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "node_id", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _Record:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Records differentiable operations for one reverse pass.

    A tape may be consumed by :meth:`backward` only once; a second call
    raises ``RuntimeError``. Re-run the forward pass under a new tape to
    differentiate again.

    >>> with Tape() as tape:
    ...     y = ops.sum(x * x)
    >>> (gx,) = tape.backward(y, [x])
    """

    def __init__(self):
        self.records = []
        self.consumed = False

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, parents, backward):
        self.records.append(_Record(out, parents, backward))

    def backward(self, loss, wrt=()):
        """Propagate d(loss) back through the tape.

        Returns one gradient array per tensor in ``wrt`` (zeros for tensors
        the loss does not reach) and also stores it on ``tensor.grad``.
        """
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        grads = {loss.node_id: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(rec.out.node_id, None)
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg
        out = []
        for t in wrt:
            g = grads.get(t.node_id)
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g
            out.append(g)
        self.records = []
        return out


def make_node(data, parents, backward):
    """Wrap an op result and record it if a tape wants it."""
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, parents, backward)
    if _debug["check_finite"] and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by operation")
    return out
