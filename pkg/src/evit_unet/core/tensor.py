"""Dense tensor with define-by-run reverse-mode differentiation.

Every differentiable op creates its output through :func:`make_result`, which
records a :class:`Node` on the output when gradients are enabled and any input
requires them. :func:`backward` gathers the nodes reachable from a scalar loss
into a :class:`Tape` ordered by recording sequence and replays it in reverse.

Only leaf tensors (those not produced by a recorded op) accumulate into
``.grad``; intermediate gradients live in a scratch table for the duration of
one backward call, so calling ``backward`` twice on the same loss doubles the
leaf gradients exactly.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DtypeMismatch, InvalidArg, NotScalar

DTYPES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

_state = threading.local()
_seq = itertools.count()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording for the enclosed block (evaluation, optimizer steps)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class MacCounter:
    """Accumulates multiply-accumulates executed by instrumented ops."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


@contextlib.contextmanager
def count_runtime_macs():
    counter = MacCounter()
    prev = getattr(_state, "macs", None)
    _state.macs = counter
    try:
        yield counter
    finally:
        _state.macs = prev


def record_macs(n: int) -> None:
    counter = getattr(_state, "macs", None)
    if counter is not None:
        counter.add(n)


class Node:
    __slots__ = ("seq", "inputs", "backward_fn")

    def __init__(self, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.seq = next(_seq)
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tensor:
    """Row-major float32/float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if dtype is None and arr.dtype not in DTYPES and arr.dtype.kind in "biuf":
            arr = arr.astype(np.float32)
        if arr.dtype not in DTYPES:
            raise DtypeMismatch(f"unsupported dtype {arr.dtype}; expected f32 or f64")
        if 0 in arr.shape:
            raise InvalidArg(f"zero-extent dimension in shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal constructor: no copy, arr is already validated by the op.
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={DTYPES[self.dtype]}{flag})"

    # Operator sugar; the implementations live in ops.
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
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def check_same_dtype(*tensors: Tensor) -> np.dtype:
    dtype = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dtype:
            raise DtypeMismatch(f"dtype mixing: {DTYPES[dtype]} vs {DTYPES[t.dtype]}")
    return dtype


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op's output, recording a tape node if any input needs gradients.

    ``backward_fn`` maps the output gradient to a tuple with one entry per
    input (``None`` for inputs that receive no gradient).
    """
    out = Tensor._wrap(data)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(inputs, backward_fn)
    return out


class Tape:
    """Recorded nodes reachable from one output, in recording order."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> tuple:
        owners = {}
        stack = [out]
        seen = set()
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            owners[id(node)] = (node, t)
            stack.extend(node.inputs)
        ordered = sorted(owners.values(), key=lambda pair: pair[0].seq)
        return cls([n for n, _ in ordered]), {id(n): t for n, t in ordered}

    def __len__(self):
        return len(self.nodes)



def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.is_leaf:
        _accumulate_leaf(loss, np.ones_like(loss.data))
        return
    tape, outputs = Tape.from_output(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    # a pass sums its own leaf contributions before touching .grad, so two
    # passes give exactly twice one pass
    leaves = {}
    for node in reversed(tape.nodes):
        out = outputs[id(node)]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if inp.is_leaf:
                ig = np.asarray(ig, dtype=inp.dtype).reshape(inp.shape)
                leaves[key] = (inp, leaves[key][1] + ig) if key in leaves else (inp, ig)
            elif key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    for leaf, g in leaves.values():
        _accumulate_leaf(leaf, g)


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g
