"""Dense tensor with reverse-mode autodiff.

Every op that touches a tensor with ``requires_grad`` records a node holding
its parents and a backward closure. :func:`backward` orders those nodes
topologically into a :class:`Tape` and replays it in reverse.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class GraphError(RuntimeError):
    """Raised on misuse of the autodiff graph (non-scalar loss, reuse, detached loss)."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class _Node:
    __slots__ = ("parents", "backward_fn", "name")

    def __init__(self, parents, backward_fn, name):
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name


class SpikeTensor:
    """N-d float array that can participate in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, SpikeTensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = np.float64 if (_KEEP_F64[0] and arr.dtype == np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(arr, dtype=dtype, order="C")  # keeps 0-d shapes, unlike ascontiguousarray
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self._consumed = False

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "SpikeTensor":
        return _wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"SpikeTensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # operators ---------------------------------------------------------
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

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


# float64 is opt-in: numpy arrays of float64 are downcast unless this is set
_KEEP_F64 = [False]


@contextlib.contextmanager
def float64_mode():
    """Keep float64 arrays at double precision (used by gradient checks)."""
    prev = _KEEP_F64[0]
    _KEEP_F64[0] = True
    try:
        yield
    finally:
        _KEEP_F64[0] = prev


def _raise_item(shape):
    raise ShapeError(f"item() needs a single element, got shape {shape}")


def tensor(data, requires_grad: bool = False, dtype=None) -> SpikeTensor:
    return SpikeTensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(arr: np.ndarray) -> SpikeTensor:
    out = SpikeTensor.__new__(SpikeTensor)
    out.data = arr
    out.requires_grad = False
    out.grad = None
    out._node = None
    out._consumed = False
    return out


def as_tensor(x, like: SpikeTensor | None = None) -> SpikeTensor:
    if isinstance(x, SpikeTensor):
        return x
    dtype = like.dtype if like is not None else None
    return SpikeTensor(x, dtype=dtype)


def make_result(
    data: np.ndarray,
    parents: Sequence[SpikeTensor],
    backward_fn: Callable[[np.ndarray], Iterable],
    name: str,
) -> SpikeTensor:
    """Wrap ``data`` and, if any parent needs gradients, attach a graph node.

    ``backward_fn`` maps the output gradient to one gradient per parent
    (``None`` for parents that need none).
    """
    out = _wrap(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(tuple(parents), backward_fn, name)
    return out


class Tape:
    """Recorded operations in topological order, ready for one reverse sweep."""

    def __init__(self, order: list[SpikeTensor]):
        self.order = order
        self._used = False

    @classmethod
    def from_loss(cls, loss: SpikeTensor) -> "Tape":
        if loss._consumed:
            raise GraphError("graph already consumed by an earlier backward(); rebuild the forward pass")
        if not loss.requires_grad:
            raise GraphError("loss is detached from the graph (no input requires grad)")
        order: list[SpikeTensor] = []
        seen: set[int] = set()
        stack: list[tuple[SpikeTensor, bool]] = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for p in t._node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
        return cls(order)

    @property
    def ops(self) -> list[str]:
        return [t._node.name for t in self.order if t._node is not None]

    def backward(self, loss: SpikeTensor) -> None:
        if self._used:
            raise GraphError("tape already replayed")
        self._used = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for t in reversed(self.order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            node = t._node
            if node is None:
                # leaf: accumulate, never overwrite
                if t.grad is None:
                    t.grad = g.astype(t.dtype, copy=True)
                else:
                    t.grad = t.grad + g
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"internal: gradient shape {pg.shape} != operand shape {p.shape} in {node.name}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # free the graph as we go
            t._node = None
            t._consumed = True


def backward(loss: SpikeTensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    Tape.from_loss(loss).backward(loss)


def grad(loss: SpikeTensor, inputs: Sequence[SpikeTensor]) -> list[np.ndarray]:
    """Run backward and return gradients for ``inputs`` (zeros where unreached)."""
    for x in inputs:
        x.grad = None
    backward(loss)
    return [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]
