"""Small reverse-mode differentiation engine over numpy arrays.

Tensors are plain ``numpy.ndarray`` values in channels-first layout
(``B, C, H, W`` for batched images).  A :class:`Node` wraps one value and
records the operation that produced it, so :func:`backward` can walk the
graph in reverse topological order.

Storage is 32-bit by default.  Gradient tests switch to 64-bit with the
:func:`precision` context manager::

    with precision(np.float64):
        x = leaf(np.random.rand(2, 2))
"""

from __future__ import annotations

import contextlib
import struct
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's preconditions (shapes, ranges) are violated."""


_DEFAULT_DTYPE = [np.dtype(np.float32)]


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used by :func:`leaf` / :func:`const` inside the block."""
    _DEFAULT_DTYPE.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


class Node:
    """A value in the differentiation graph.

    ``grad`` always has the shape of ``value``.  Leaves accumulate into it on
    every :func:`backward` call; call :meth:`zero_grad` to reset.
    """

    __slots__ = ("value", "_grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), backward_fn=None,
                 requires_grad: bool = False, name: str | None = None):
        self.value = value
        self._grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} shape={self.shape} dtype={self.dtype}>"

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
        return scale(self, -1.0)


def leaf(value, requires_grad: bool = True, name: str | None = None) -> Node:
    """Trainable (or at least differentiable) input."""
    return Node(np.array(value, dtype=default_dtype()), requires_grad=requires_grad, name=name)


def const(value, name: str | None = None) -> Node:
    return Node(np.asarray(value, dtype=default_dtype()), requires_grad=False, name=name)


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    if isinstance(x, np.ndarray):
        return Node(x)
    return const(x)


def _make(value, parents, backward_fn) -> Node:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Node(value)
    return Node(value, parents, backward_fn)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    out = a.value / b.value
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)))


def scale(a: Node, s: float) -> Node:
    return _make(a.value * s, (a,), lambda g: (g * s,))


def absolute(a: Node) -> Node:
    # subgradient 0 at 0
    return _make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def square(a: Node) -> Node:
    return _make(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a: Node) -> Node:
    x = a.value
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Node, slope: float = 0.1) -> Node:
    mask = a.value > 0
    factor = np.where(mask, 1.0, slope).astype(a.dtype, copy=False)
    return _make(a.value * factor, (a,), lambda g: (g * factor,))


def clip(a: Node, lo: float, hi: float) -> Node:
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


# -- shape ------------------------------------------------------------------

def concat(nodes: Sequence, axis: int = 1) -> Node:
    """Concatenate along the channel axis (axis 1 for batched tensors)."""
    nodes = [as_node(n) for n in nodes]
    ref = nodes[0].shape
    for n in nodes[1:]:
        if len(n.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(n.shape, ref)) if i != axis % len(ref)):
            raise ContractError(f"concat needs equal non-channel extents: {ref} vs {n.shape}")
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(nodes)))

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, back)


def channels(a: Node, start: int, stop: int) -> Node:
    """Slice channels ``start:stop`` of a ``B, C, H, W`` tensor."""
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _make(a.value[:, start:stop], (a,), back)


def reshape(a: Node, shape) -> Node:
    orig = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


# -- reductions -------------------------------------------------------------

def total(a: Node) -> Node:
    return _make(np.asarray(a.value.sum(), dtype=a.dtype), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def mean(a: Node) -> Node:
    n = a.value.size
    return _make(np.asarray(a.value.mean(), dtype=a.dtype), (a,),
                 lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def add_n(nodes: Iterable[Node]) -> Node:
    nodes = [as_node(n) for n in nodes]
    out = nodes[0].value.copy()
    for n in nodes[1:]:
        out = out + n.value
    return _make(out, nodes, lambda g: tuple(_unbroadcast(g, n.shape) for n in nodes))


def apply(fn: Callable[[np.ndarray], np.ndarray], a: Node,
          vjp: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Node:
    """Wrap a custom differentiable function given its vector-Jacobian product."""
    return _make(fn(a.value), (a,), lambda g: (vjp(g, a.value),))


# -- serialization ----------------------------------------------------------

def write_tensor(fh: BinaryIO, name: str, value: np.ndarray) -> None:
    """Append one tensor record: name, rank, extents, raw float32 (all little-endian)."""
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", value.ndim))
    fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
    fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise OSError(f"truncated tensor record: wanted {n} bytes, got {len(data)}")
    return data


def read_tensor(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, n).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").astype(np.float32)
    return name, data.reshape(shape)
