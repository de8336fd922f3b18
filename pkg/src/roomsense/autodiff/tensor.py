"""Dense tensor with a reverse-mode gradient tape.

Storage is float32 by default; tests may build float64 tensors for
finite-difference shadow checks, and every op preserves the input dtype.
A single module-level tape records operations in execution order;
``backward`` replays it in exact reverse order. One logical training
thread owns the tape (forward kernels are plain numpy and deterministic).
"""

from __future__ import annotations

import numpy as np

from ..errors import GradientError

DEFAULT_DTYPE = np.float32


class Tensor:
    """N-d array node. Leaves may require grad; op outputs track it."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _nonscalar(self)

    def detach(self):
        """Leaf view sharing this tensor's data, cut from the tape."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # Arithmetic sugar; the op implementations live in ops.py.
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"


def _nonscalar(t):
    raise GradientError(f"expected a scalar tensor, got shape {tuple(t.shape)}")


class _OpRecord:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations.

    Topological order holds by construction: an op is appended only after
    its inputs exist. ``backward`` walks the records strictly in reverse.
    """

    def __init__(self):
        self.records = []

    def record(self, name, inputs, output, backward_fn):
        self.records.append(_OpRecord(name, inputs, output, backward_fn))

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()

    def backward(self, loss):
        if loss.data.size != 1:
            raise GradientError(
                f"backward() needs a scalar loss, got shape {tuple(loss.shape)}")
        if not loss.requires_grad:
            raise GradientError("loss does not require grad; nothing to differentiate")
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records):
            out_grad = rec.output.grad
            if out_grad is None:
                continue
            in_grads = rec.backward_fn(out_grad)
            for inp, g in zip(rec.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.accumulate_grad(g)


_TAPE = Tape()
_GRAD_ENABLED = True


def tape():
    return _TAPE


def reset_tape():
    _TAPE.clear()


def grad_enabled():
    return _GRAD_ENABLED


class no_grad:
    """Context manager that suppresses tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def backward(loss):
    """Populate ``grad`` on every requires-grad tensor reachable from loss."""
    _TAPE.backward(loss)


def as_tensor(x, like=None):
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), requires_grad=False, dtype=dtype)
