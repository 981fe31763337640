"""Dense float64 tensors with taped reverse-mode differentiation.

Every operation allocates a fresh output tensor that records its parent
tensors and a backward closure.  Calling :func:`backward` on a scalar loss
replays the closures in exact reverse execution order, so repeated
backward passes (after a grad reset) are bit-for-bit identical.

All arithmetic is float64.  Each op checks its result for NaN/Inf and
raises :class:`NonFiniteError` naming the op, which doubles as the
"first non-finite tensor" diagnostic during training.

There is no implicit broadcasting.  The only documented broadcast is the
spatial-mask case of :func:`hadamard` (a ``(W, H)`` mask applied across
the trailing channel axis of a ``(W, H, C)`` tensor); everything else is
shape-strict.  Row vectors are added to matrices through the explicit
:func:`add_rowvec` op.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from finite inputs."""


class GraphError(RuntimeError):
    """Invalid computation graph use (non-scalar loss, cycle, ...)."""


_seq = itertools.count()


class Tensor:
    """N-dimensional float64 array plus an optional gradient buffer.

    Leaf tensors with ``requires_grad=True`` get a zero gradient buffer at
    construction; intermediate tensors get one lazily during backward.
    ``requires_grad`` propagates from parents, so anything computed from a
    trainable leaf participates in the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn", "_seq_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._seq_id = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros (kept allocated for leaves)."""
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(op={self.op!r}, shape={self.shape}{flags})"


def node(data: np.ndarray, parents: Sequence[Tensor],
         backward_fn: Callable[[np.ndarray], None], op: str) -> Tensor:
    """Create an op output tensor; the extension point for custom ops.

    ``backward_fn`` receives the output gradient and must accumulate into
    the parents via :func:`accumulate`.  Parents are only recorded when at
    least one of them requires grad, so constant subgraphs stay leaves.
    """
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    out = Tensor(arr)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``; no-op for tensors outside the tape."""
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


class CompGraph:
    """The executed-op record reachable from one output tensor.

    ``nodes`` is in execution order (creation sequence), which is a
    topological order by construction: an op tensor is always created
    after its inputs.  Backward walks ``nodes`` in reverse.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "CompGraph":
        seen: set[int] = set()
        on_stack: set[int] = set()
        collected: list[Tensor] = []
        stack: list[tuple[Tensor, int]] = [(out, 0)]
        while stack:
            t, idx = stack.pop()
            if idx == 0:
                if id(t) in on_stack:
                    raise GraphError("cycle detected in computation graph")
                if id(t) in seen:
                    continue
                on_stack.add(id(t))
            parents = t._parents
            if idx < len(parents):
                stack.append((t, idx + 1))
                p = parents[idx]
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, 0))
            else:
                on_stack.discard(id(t))
                seen.add(id(t))
                collected.append(t)
        collected.sort(key=lambda t: t._seq_id)
        return cls(collected)


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) into every requires_grad ancestor.

    Gradients accumulate; call ``zero_grad`` on leaves between passes.
    Discrete selections (masks, gather indices) were frozen at forward
    time, so gradients flow only through the gathered values.
    """
    if loss.ndim != 0:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any requires_grad tensor")
    graph = CompGraph.from_output(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for t in reversed(graph.nodes):
        if t._backward_fn is not None:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            t._backward_fn(g)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        accumulate(a, g)
        accumulate(b, g)

    return node(a.data + b.data, (a, b), bw, "add")


def add_n(ts: Sequence[Tensor]) -> Tensor:
    if not ts:
        raise ShapeError("add_n: empty operand list")
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n: shapes {shape} and {t.shape} differ")

    def bw(g):
        for t in ts:
            accumulate(t, g)

    total = ts[0].data.copy()
    for t in ts[1:]:
        total += t.data
    return node(total, tuple(ts), bw, "add_n")


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-C vector to every row of an (R, C) matrix."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {a.shape} and {v.shape} incompatible")

    def bw(g):
        accumulate(a, g)
        accumulate(v, g.sum(axis=0))

    return node(a.data + v.data[None, :], (a, v), bw, "add_rowvec")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        accumulate(a, c * g)

    return node(c * a.data, (a,), bw, "scale")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a (W, H) mask against (W, H, C)."""
    if a.shape == b.shape:
        def bw(g):
            accumulate(a, g * b.data)
            accumulate(b, g * a.data)

        return node(a.data * b.data, (a, b), bw, "hadamard")
    if a.ndim >= 1 and b.shape == a.shape[:-1]:
        mask = b.data[..., None]

        def bw(g):
            accumulate(a, g * mask)
            accumulate(b, (g * a.data).sum(axis=-1))

        return node(a.data * mask, (a, b), bw, "hadamard")
    raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} incompatible")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def bw(g):
        accumulate(a, g @ b.data.T)
        accumulate(b, a.data.T @ g)

    return node(a.data @ b.data, (a, b), bw, "matmul")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def bw(g):
        accumulate(a, g.reshape(old))

    return node(a.data.reshape(shape), (a,), bw, "reshape")


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows by index; backward scatter-adds into the source rows."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: indices must be a flat sequence")

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            accumulate(a, ga)

    return node(a.data[idx], (a,), bw, "gather_rows")


def gather_cols(a: Tensor, indices: Sequence[int]) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"gather_cols: need a matrix, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, (slice(None), idx), g)
            accumulate(a, ga)

    return node(a.data[:, idx], (a,), bw, "gather_cols")


def concat_rows(ts: Sequence[Tensor]) -> Tensor:
    if not ts:
        raise ShapeError("concat_rows: empty operand list")
    trailing = ts[0].shape[1:]
    for t in ts:
        if t.shape[1:] != trailing:
            raise ShapeError(f"concat_rows: trailing dims {t.shape[1:]} vs {trailing}")
    sizes = [t.shape[0] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            accumulate(t, g[lo:hi])

    return node(np.concatenate([t.data for t in ts], axis=0), tuple(ts), bw, "concat_rows")


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def bw(g):
        accumulate(a, g * keep)

    return node(np.maximum(a.data, 0.0), (a,), bw, "relu")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g):
        accumulate(a, g * (1.0 - y * y))

    return node(y, (a,), bw, "tanh")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)

    def bw(g):
        accumulate(a, g / a.data)

    return node(y, (a,), bw, "log")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; each slice sums to 1."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        accumulate(a, y * (g - inner))

    return node(y, (a,), bw, "softmax")


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        accumulate(a, np.full_like(a.data, float(g)))

    return node(a.data.sum(), (a,), bw, "sum_all")


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the leading axis of an (R, C) matrix, giving (C,)."""
    if a.ndim != 2:
        raise ShapeError(f"mean_rows: need a matrix, got shape {a.shape}")
    r = a.shape[0]

    def bw(g):
        accumulate(a, np.broadcast_to(g[None, :] / r, a.shape).copy())

    return node(a.data.mean(axis=0), (a,), bw, "mean_rows")


def global_average_pool(m: Tensor) -> Tensor:
    """(W, H, N) -> (N,): mean over both spatial axes."""
    if m.ndim != 3:
        raise ShapeError(f"global_average_pool: need (W, H, N), got {m.shape}")
    w, h, _ = m.shape
    if w < 1 or h < 1:
        raise ShapeError("global_average_pool: empty spatial extent")

    def bw(g):
        accumulate(m, np.broadcast_to(g[None, None, :] / (w * h), m.shape).copy())

    return node(m.data.mean(axis=(0, 1)), (m,), bw, "global_average_pool")


def channel_average_pool(m: Tensor) -> Tensor:
    """(W, H, N) -> (W, H): mean over the channel axis."""
    if m.ndim != 3:
        raise ShapeError(f"channel_average_pool: need (W, H, N), got {m.shape}")
    n = m.shape[2]

    def bw(g):
        accumulate(m, np.broadcast_to(g[..., None] / n, m.shape).copy())

    return node(m.data.mean(axis=2), (m,), bw, "channel_average_pool")
