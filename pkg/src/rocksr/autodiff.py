"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

The model is deliberately small: a ``Tensor`` wraps an ndarray, a ``Tape``
records every differentiable primitive executed inside its ``with`` block,
and ``Tape.backward`` replays the records in reverse, accumulating
gradients.  Tensors are treated as immutable once created; optimizers may
mutate ``Parameter.data`` in place only between tapes.

Default precision is float32.  Everything also runs in float64, which the
gradient-check harness uses to build a high-precision twin of a float32
network.  Ops never mix dtypes silently: combining float32 and float64
operands raises, so an accidental upcast cannot masquerade as accuracy.

One forward/backward pass owns its tape exclusively.  The active tape is
tracked per-thread, so independent threads may run independent tapes, but
a single tape must never be shared across threads.
"""

from __future__ import annotations

import threading

import numpy as np

DEFAULT_DTYPE = np.float32
_FLOAT_TYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """An operand's shape (or dtype) violates an op's contract."""


class Tensor:
    """A dense array plus gradient metadata.

    ``requires_grad`` marks tensors whose gradient should be tracked when a
    tape is active.  After ``Tape.backward``, leaf tensors that required
    gradients have ``.grad`` populated; interior results are discarded as
    the reverse sweep passes them.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.dtype.type not in _FLOAT_TYPES:
            raise ShapeError(f"tensors must be float32 or float64, got {arr.dtype}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same storage, no gradient tracking."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """A named leaf tensor owned by a network.

    Gradients accumulate into a preallocated ``.grad`` buffer so an
    optimizer can rely on it always being an array of the right shape.
    """

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


_ACTIVE = threading.local()


def current_tape():
    stack = getattr(_ACTIVE, "stack", None)
    if stack:
        return stack[-1]
    return None


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Records are ``(output, inputs, backward)`` triples where ``backward``
    maps the output cotangent to a tuple of input cotangents (``None`` for
    inputs that need no gradient).  ``backward(loss)`` walks the records in
    reverse execution order; because every consumer of a value is recorded
    after its producer, all contributions to a value's gradient have
    arrived by the time its producing record is visited.
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE.stack.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted: exited a tape that was not innermost")
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple, backward) -> None:
        self._records.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf.

        ``loss`` must be a scalar produced under this tape (a constant
        scalar is allowed and simply has no dependencies).  Parameter
        gradients are added to ``.grad`` in place; plain leaf tensors get
        ``.grad`` set (or added, if already present).
        """
        if loss.data.ndim != 0:
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        # id() keys are stable here because each (tensor, grad) pair keeps a
        # strong reference to the tensor for the dict entry's lifetime.
        pending: dict[int, list] = {id(loss): [loss, np.ones((), dtype=loss.data.dtype)]}
        for out, inputs, backward in reversed(self._records):
            entry = pending.pop(id(out), None)
            if entry is None:
                continue
            in_grads = backward(entry[1])
            for tensor, grad in zip(inputs, in_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if isinstance(tensor, Parameter):
                    tensor.grad += grad
                else:
                    prev = pending.get(id(tensor))
                    if prev is None:
                        pending[id(tensor)] = [tensor, grad]
                    else:
                        prev[1] = prev[1] + grad
        for tensor, grad in pending.values():
            if isinstance(tensor, Parameter) or not tensor.requires_grad:
                continue
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def record_op(result: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap an op result, registering it on the active tape when needed.

    When no tape is active (inference) or no input requires a gradient,
    the result is an untracked constant and ``backward`` is dropped.
    """
    tape = current_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(result, requires_grad=track)
    if track:
        tape.record(out, inputs, backward)
    return out


def _check_same(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{opname}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def check_dtype(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{opname}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _as_scalar(value, dtype):
    # python scalars fold into the op as constants, preserving dtype
    return dtype.type(value)


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same(a, b, "add")

        def backward(g):
            return g, g

        return record_op(a.data + b.data, (a, b), backward)
    c = _as_scalar(b, a.data.dtype)

    def backward(g):
        return (g,)

    return record_op(a.data + c, (a,), backward)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same(a, b, "sub")

        def backward(g):
            return g, -g

        return record_op(a.data - b.data, (a, b), backward)
    return add(a, -b)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return record_op(-a.data, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same(a, b, "mul")
        ad, bd = a.data, b.data

        def backward(g):
            return g * bd, g * ad

        return record_op(ad * bd, (a, b), backward)
    c = _as_scalar(b, a.data.dtype)

    def backward(g):
        return (g * c,)

    return record_op(a.data * c, (a,), backward)


def square(a: Tensor) -> Tensor:
    ad = a.data

    def backward(g):
        return (g * (2 * ad),)

    return record_op(ad * ad, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    """|a| with sign(0) treated as 0 in the gradient."""
    ad = a.data

    def backward(g):
        return (g * np.sign(ad),)

    return record_op(np.abs(ad), (a,), backward)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def backward(g):
        return (g / ad,)

    return record_op(np.log(ad), (a,), backward)


def mean(a: Tensor) -> Tensor:
    ad = a.data
    n = ad.dtype.type(ad.size)

    def backward(g):
        return (np.broadcast_to(g / n, ad.shape),)

    return record_op(ad.mean(dtype=ad.dtype), (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is zero at and beyond the rails."""
    ad = a.data
    mask = (ad > lo) & (ad < hi)

    def backward(g):
        return (g * mask,)

    return record_op(np.clip(ad, lo, hi), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    ad = a.data
    src_shape = ad.shape

    def backward(g):
        return (g.reshape(src_shape),)

    return record_op(ad.reshape(shape), (a,), backward)
