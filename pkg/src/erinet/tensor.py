"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: every differentiable op appends a node to an ambient
:class:`Graph` as it executes, so the recording order is already a
topological order. ``backward(loss)`` walks that record in reverse, visits
each reachable node exactly once, accumulates gradients into every
``requires_grad`` tensor it touches, and then clears the record.

Storage is row-major numpy, 32-bit floats by default. Gradient checks need
more headroom, so the default dtype can be switched globally (or locally via
:func:`use_dtype`) to 64 bits. Broadcasting is intentionally narrow: the
second operand of an elementwise op may only stretch trailing axes of
extent 1 (missing leading axes also stretch). Anything richer is rejected.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    AxisOutOfRange,
    NonFiniteGradient,
    NotScalar,
    ShapeMismatch,
)

_FLOAT_DTYPES = (np.float32, np.float64)

_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError("default dtype must be float32 or float64")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default float width (64-bit for grad checks)."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forwards inside run as plain numpy."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Node:
    """One executed op: its output, its inputs, and how to push gradients back."""

    __slots__ = ("op", "out", "parents", "backward_fn", "node_id")

    def __init__(self, op: str, out: "Tensor", parents: tuple, backward_fn: Callable, node_id: int):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.node_id = node_id


class Graph:
    """Ordered record of the ops executed during one forward pass.

    Execution order is a topological order by construction, so the reverse
    sweep in ``backward`` needs no explicit sort.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, op: str, out: "Tensor", parents: tuple, backward_fn: Callable) -> Node:
        node = Node(op, out, parents, backward_fn, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self) -> None:
        for node in self.nodes:
            node.out._node = None
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_graph = Graph()


def active_graph() -> Graph:
    return _graph


def reset_graph() -> None:
    _graph.clear()


class Tensor:
    """Dense n-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out._node = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def node_id(self) -> int | None:
        return self._node.node_id if self._node is not None else None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # Operator sugar. Scalars are wrapped at the operand's dtype so float
    # literals never promote a float32 graph to float64.
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor._wrap(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self, self._coerce(other))

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return add(neg(self), self._coerce(other))

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self, self._coerce(other))

    def __truediv__(self, other):
        return div(self, self._coerce(other))

    def __rtruediv__(self, other):
        numer = Tensor._wrap(np.full(self.shape, other, dtype=self.data.dtype))
        return div(numer, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axes=None, keepdims: bool = False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False):
        return reduce("mean", self, axes, keepdims)

    def max(self, axes=None, keepdims: bool = False):
        return reduce("max", self, axes, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_default_dtype), requires_grad=requires_grad)


def ones_like(t: Tensor) -> Tensor:
    return Tensor._wrap(np.ones_like(t.data))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor._wrap(np.zeros_like(t.data))


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Recording machinery


def _record(op: str, out: Tensor, parents: tuple, backward_fn: Callable) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _graph.record(op, out, parents, backward_fn)
    return out


def _accumulate(t: Tensor, g: np.ndarray, op: str) -> None:
    if not np.isfinite(g).all():
        raise NonFiniteGradient(f"non-finite gradient produced by op {op!r}")
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss.

    Accumulates gradients into every requires_grad tensor reachable from
    ``loss`` and clears the ambient graph. A loss with no recorded node
    (nothing on its path requires grad) is a validated no-op.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    root = loss._node
    if root is None:
        return
    reachable: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in reachable:
            continue
        reachable.add(node.node_id)
        for parent in node.parents:
            if parent._node is not None:
                stack.append(parent._node)
    _accumulate(loss, np.ones_like(loss.data), "seed")
    try:
        for node in reversed(_graph.nodes):
            if node.node_id not in reachable:
                continue
            out_grad = node.out.grad
            needs = tuple(p.requires_grad for p in node.parents)
            parent_grads = node.backward_fn(out_grad, needs)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                _accumulate(parent, g, node.op)
    finally:
        _graph.clear()


# ---------------------------------------------------------------------------
# Broadcast rules (trailing axes only; extent-1 stretches)


def _broadcastable_to(b_shape: tuple[int, ...], a_shape: tuple[int, ...]) -> bool:
    if len(b_shape) > len(a_shape):
        return False
    for ea, eb in zip(reversed(a_shape), reversed(b_shape)):
        if eb != 1 and eb != ea:
            return False
    return True


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes the forward broadcast stretched."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, e in enumerate(shape) if e == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    if kind not in ("add", "sub", "mul", "div"):
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if a.shape != b.shape and not _broadcastable_to(b.shape, a.shape):
        raise ShapeMismatch(f"cannot broadcast {b.shape} to {a.shape} for {kind}")
    if kind == "add":
        data = a.data + b.data
    elif kind == "sub":
        data = a.data - b.data
    elif kind == "mul":
        data = a.data * b.data
    else:
        data = a.data / b.data
    out = Tensor._wrap(data)
    a_data, b_data = a.data, b.data
    b_shape = b.shape

    def backward_fn(g, needs):
        if kind == "add":
            ga = g if needs[0] else None
            gb = _unbroadcast(g, b_shape) if needs[1] else None
        elif kind == "sub":
            ga = g if needs[0] else None
            gb = _unbroadcast(-g, b_shape) if needs[1] else None
        elif kind == "mul":
            ga = g * b_data if needs[0] else None
            gb = _unbroadcast(g * a_data, b_shape) if needs[1] else None
        else:
            ga = g / b_data if needs[0] else None
            gb = _unbroadcast(-g * a_data / (b_data * b_data), b_shape) if needs[1] else None
        return ga, gb

    return _record(kind, out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("div", a, b)


def neg(a: Tensor) -> Tensor:
    out = Tensor._wrap(-a.data)

    def backward_fn(g, needs):
        return (-g if needs[0] else None,)

    return _record("neg", out, (a,), backward_fn)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor._wrap(a.data @ b.data)
    a_data, b_data = a.data, b.data

    def backward_fn(g, needs):
        ga = g @ b_data.T if needs[0] else None
        gb = a_data.T @ g if needs[1] else None
        return ga, gb

    return _record("matmul", out, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose needs a 2-D tensor, got {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data.T))

    def backward_fn(g, needs):
        return (np.ascontiguousarray(g.T) if needs[0] else None,)

    return _record("transpose", out, (a,), backward_fn)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over [B, C, H, W] with an [F, C, kh, kw] kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d needs 4-D input and kernel, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeMismatch(f"channel disagreement: input {x.shape[1]}, kernel {kernel.shape[1]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    _, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    out = Tensor._wrap(kernels.conv2d_forward(x.data, kernel.data, stride, padding))
    x_data, k_data = x.data, kernel.data

    def backward_fn(g, needs):
        gx = kernels.conv2d_backward_input(g, k_data, stride, padding, h, w) if needs[0] else None
        gk = kernels.conv2d_backward_kernel(g, x_data, stride, padding, kh, kw) if needs[1] else None
        return gx, gk

    return _record("conv2d", out, (x, kernel), backward_fn)


# ---------------------------------------------------------------------------
# Pointwise nonlinearities


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        data = np.maximum(x.data, 0)
        x_data = x.data

        def backward_fn(g, needs):
            return (g * (x_data > 0) if needs[0] else None,)

    elif kind == "sigmoid":
        data = _stable_sigmoid(x.data)
        # Saturated values are nudged one ulp into the open interval so the
        # (0, 1) range contract survives float32 rounding.
        one = data.dtype.type(1)
        zero = data.dtype.type(0)
        np.clip(data, np.nextafter(zero, one), np.nextafter(one, zero), out=data)
        s = data

        def backward_fn(g, needs):
            return (g * s * (1.0 - s) if needs[0] else None,)

    elif kind == "tanh":
        data = np.tanh(x.data)
        one = data.dtype.type(1)
        zero = data.dtype.type(0)
        np.clip(data, np.nextafter(-one, zero), np.nextafter(one, zero), out=data)
        t = data

        def backward_fn(g, needs):
            return (g * (1.0 - t * t) if needs[0] else None,)

    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    out = Tensor._wrap(data)
    return _record(kind, out, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    return activation("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return activation("sigmoid", x)


def tanh(x: Tensor) -> Tensor:
    return activation("tanh", x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor._wrap(data)
    s = data

    def backward_fn(g, needs):
        if not needs[0]:
            return (None,)
        inner = np.sum(g * s, axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _record("softmax", out, (x,), backward_fn)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)
    out = Tensor._wrap(data)

    def backward_fn(g, needs):
        return (g * data if needs[0] else None,)

    return _record("exp", out, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.log(x.data))
    x_data = x.data

    def backward_fn(g, needs):
        return (g / x_data if needs[0] else None,)

    return _record("log", out, (x,), backward_fn)


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)
    out = Tensor._wrap(data)

    def backward_fn(g, needs):
        return (g / (2.0 * data) if needs[0] else None,)

    return _record("sqrt", out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# Reductions, concatenation, shape ops


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    normalized = []
    for ax in axes:
        ax = int(ax)
        if ax < 0:
            ax += ndim
        if not 0 <= ax < ndim:
            raise AxisOutOfRange(f"axis {ax} out of range for ndim {ndim}")
        normalized.append(ax)
    if len(set(normalized)) != len(normalized):
        raise AxisOutOfRange(f"repeated axes in {axes}")
    return tuple(sorted(normalized))


def reduce(kind: str, x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _normalize_axes(axes, x.ndim)
    x_shape = x.shape
    if kind == "sum":
        data = x.data.sum(axis=axes_t, keepdims=keepdims)

        def backward_fn(g, needs):
            if not needs[0]:
                return (None,)
            ge = g if keepdims else np.expand_dims(g, axes_t)
            return (np.broadcast_to(ge, x_shape).copy(),)

    elif kind == "mean":
        count = 1
        for ax in axes_t:
            count *= x_shape[ax]
        data = x.data.mean(axis=axes_t, keepdims=keepdims)

        def backward_fn(g, needs):
            if not needs[0]:
                return (None,)
            ge = g if keepdims else np.expand_dims(g, axes_t)
            return (np.broadcast_to(ge / count, x_shape).copy(),)

    elif kind == "max":
        data = x.data.max(axis=axes_t, keepdims=keepdims)
        # Route gradient to the first (row-major) maximum of each reduced
        # block; ties break to the lowest index.
        kept = tuple(i for i in range(x.ndim) if i not in axes_t)
        moved = np.transpose(x.data, kept + axes_t)
        kept_shape = tuple(x_shape[i] for i in kept)
        flat = moved.reshape(kept_shape + (-1,))
        argmax = flat.argmax(axis=-1)

        def backward_fn(g, needs):
            if not needs[0]:
                return (None,)
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, argmax[..., None], g.reshape(kept_shape + (1,)), axis=-1)
            gmoved = gflat.reshape(moved.shape)
            inverse = np.argsort(kept + axes_t)
            return (np.ascontiguousarray(np.transpose(gmoved, inverse)),)

    else:
        raise ValueError(f"unknown reduce kind {kind!r}")
    out = Tensor._wrap(np.asarray(data))
    return _record(kind, out, (x,), backward_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat needs at least one tensor")
    ndim = parts[0].ndim
    if axis < 0:
        axis += ndim
    if not 0 <= axis < ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for ndim {ndim}")
    ref = list(parts[0].shape)
    for p in parts[1:]:
        if p.ndim != ndim:
            raise ShapeMismatch("concat parts differ in rank")
        for i in range(ndim):
            if i != axis and p.shape[i] != ref[i]:
                raise ShapeMismatch(f"concat parts differ off-axis: {parts[0].shape} vs {p.shape}")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis))
    extents = [p.shape[axis] for p in parts]

    def backward_fn(g, needs):
        grads = []
        offset = 0
        for extent, need in zip(extents, needs):
            sl = [slice(None)] * ndim
            sl[axis] = slice(offset, offset + extent)
            grads.append(np.ascontiguousarray(g[tuple(sl)]) if need else None)
            offset += extent
        return tuple(grads)

    return _record("concat", out, tuple(parts), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor._wrap(x.data.reshape(shape))
    x_shape = x.shape

    def backward_fn(g, needs):
        return (g.reshape(x_shape) if needs[0] else None,)

    return _record("reshape", out, (x,), backward_fn)


def getitem(x: Tensor, key) -> Tensor:
    """Basic indexing only (ints and slices); each element selected at most once."""
    out = Tensor._wrap(np.ascontiguousarray(x.data[key]))
    x_shape = x.shape
    x_dtype = x.data.dtype

    def backward_fn(g, needs):
        if not needs[0]:
            return (None,)
        gx = np.zeros(x_shape, dtype=x_dtype)
        gx[key] = g
        return (gx,)

    return _record("getitem", out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# Finite-difference verification


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` must be a deterministic scalar-valued closure over ``params``.
    Returns the max of ``|a - n| / max(|a|, |n|, 1e-8)`` over every
    coordinate of every parameter. Run under 64-bit mode for meaningful
    thresholds.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zero_grad(params)
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grad(params)
    max_err = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            if not p.data.flags["C_CONTIGUOUS"]:
                p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                f_plus = float(f().data)
                flat[i] = original - eps
                f_minus = float(f().data)
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * eps)
                err = abs(float(a_flat[i]) - numeric) / max(abs(float(a_flat[i])), abs(numeric), 1e-8)
                max_err = max(max_err, err)
    return max_err
