"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Values live in float64 ndarrays. Operations executed while a :class:`Tape` is
active and that touch at least one tape-owned tensor are recorded; everything
else is evaluated eagerly as a constant, so the same formulas serve both the
differentiable training path and plain numeric evaluation.

    >>> with Tape() as tape:
    ...     x = tape.variable(3.0, name="x")
    ...     y = square(x)
    >>> float(backward(tape, y)["x"])
    6.0
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "Tensor",
    "Tape",
    "GradientMap",
    "backward",
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "dot",
    "sum",
    "mean",
    "variance",
    "max",
    "maximum",
    "abs",
    "sin",
    "cos",
    "exp",
    "sqrt",
    "square",
    "power",
    "tanh",
    "sigmoid",
    "scale",
    "reshape",
    "stack",
    "concat",
    "take",
]

DIV_GUARD = 1e-12

_local = threading.local()
_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible with the primitive."""


class NumericError(ArithmeticError):
    """A primitive produced a non-finite value."""

    def __init__(self, primitive: str, message: str = "non-finite result"):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


def _active_tape() -> "Tape | None":
    return getattr(_local, "tape", None)


class Tensor:
    """An array value, optionally tracked by a tape."""

    __slots__ = ("value", "tape", "index", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, tape: "Tape | None" = None, index: int | None = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __float__(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"cannot convert tensor of shape {self.shape} to float")
        return float(self.value.reshape(-1)[0])

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor({self.value!r}{tag})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, k: power(self, k)
    __getitem__ = lambda self, key: take(self, key)

    @property
    def T(self) -> "Tensor":
        return _transpose(self)


class _Node:
    __slots__ = ("parents", "vjp", "primitive")

    def __init__(self, parents: tuple[int, ...], vjp: Callable, primitive: str):
        self.parents = parents
        self.vjp = vjp
        self.primitive = primitive


class Tape:
    """Records primitives in execution order for one forward/backward pass.

    A tape is single-writer. Use it as a context manager to make it the
    recording target for the current thread; nested tapes are not supported.
    """

    def __init__(self):
        self.nodes: list[_Node | None] = []
        self.leaves: dict[int, Tensor] = {}
        self.consumed = False
        self._previous = None

    def __enter__(self) -> "Tape":
        self._previous = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._previous
        self._previous = None

    def variable(self, value, name: str | None = None) -> Tensor:
        """Register a leaf whose gradient backward() should report."""
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("variable", "non-finite leaf value")
        index = len(self.nodes)
        self.nodes.append(None)
        leaf = Tensor(arr, self, index, name if name is not None else f"v{next(_ids)}")
        self.leaves[index] = leaf
        return leaf

    def _record(self, value: np.ndarray, parents: Sequence[Tensor], vjp: Callable, primitive: str) -> Tensor:
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        idx = tuple(p.index if p.tape is self else -1 for p in parents)
        self.nodes.append(_Node(idx, vjp, primitive))
        return Tensor(value, self, len(self.nodes) - 1)

    def __len__(self) -> int:
        return len(self.nodes)


class GradientMap(dict):
    """Leaf name -> gradient array. Also indexable by the leaf tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.name
        return super().__getitem__(key)

    def __contains__(self, key) -> bool:
        if isinstance(key, Tensor):
            key = key.name
        return super().__contains__(key)


def backward(tape: Tape, root: Tensor, seed=1.0) -> GradientMap:
    """Propagate d(root)/d(leaf) for every registered leaf. Consumes the tape."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if tape.consumed:
        raise RuntimeError("tape already consumed by backward()")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    if root.tape is tape:
        grads[root.index] = np.full(root.shape, float(seed))
        for i in range(root.index, -1, -1):
            g = grads[i]
            node = tape.nodes[i]
            if g is None or node is None:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if p < 0 or pg is None:
                    continue
                if grads[p] is None:
                    grads[p] = pg
                else:
                    grads[p] = grads[p] + pg
    out = GradientMap()
    for index, leaf in tape.leaves.items():
        g = grads[index]
        out[leaf.name] = np.zeros(leaf.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    tape.consumed = True
    tape.nodes = []
    return out


# --------------------------------------------------------------------------
# plumbing


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(primitive: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericError(primitive)
    return value


def _emit(primitive: str, value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    _check(primitive, value)
    tape = _active_tape()
    if tape is None:
        for p in parents:
            if p.tape is not None and not p.tape.consumed:
                tape = p.tape
                break
    if tape is None or not any(p.tape is tape for p in parents):
        return Tensor(value)
    return tape._record(value, parents, vjp, primitive)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(primitive: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{primitive}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# binary element-wise


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Element-wise product (scalar operands broadcast)."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _emit(
        "mul", av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def _guard_denominator(d: np.ndarray) -> np.ndarray:
    return np.where(np.abs(d) < DIV_GUARD, np.where(d < 0, -DIV_GUARD, DIV_GUARD), d)


def div(a, b) -> Tensor:
    """Element-wise quotient; denominators are clamped to magnitude >= 1e-12."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape("div", a, b)
    av = a.value
    bv = _guard_denominator(b.value)
    out = av / bv
    return _emit(
        "div", out, (a, b), lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape))
    )


def maximum(a, b) -> Tensor:
    """Element-wise maximum; ties send the gradient to the first operand."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape("maximum", a, b)
    pick_a = a.value >= b.value
    sa, sb = a.shape, b.shape
    return _emit(
        "maximum",
        np.where(pick_a, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), sa), _unbroadcast(np.where(pick_a, 0.0, g), sb)),
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _emit("neg", -a.value, (a,), lambda g: (-g,))


def scale(a, k: float) -> Tensor:
    """Multiply by a constant real."""
    a = _lift(a)
    k = float(k)
    return _emit("scale", a.value * k, (a,), lambda g: (g * k,))


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics (batched over leading axes)."""
    a, b = _lift(a), _lift(b)
    if a.value.ndim == 0 or b.value.ndim == 0:
        raise ShapeError("matmul: scalar operand")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    av, bv = a.value, b.value

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            ga = np.matmul(bv, g[..., None])[..., 0] if bv.ndim > 1 else g * bv
            gb = av[:, None] * g[..., None, :]
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)
        if bv.ndim == 1:
            ga = g[..., :, None] * bv
            gb = np.matmul(np.swapaxes(av, -1, -2), g[..., None])[..., 0]
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _emit("matmul", out, (a, b), vjp)


def dot(a, b) -> Tensor:
    """Inner product of two vectors of equal length."""
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: need equal-length vectors, got {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _emit("dot", np.asarray(av @ bv), (a, b), lambda g: (g * bv, g * av))


def _transpose(a: Tensor) -> Tensor:
    return _emit("transpose", np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# --------------------------------------------------------------------------
# reductions


def _axes(ndim: int, axis) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in sorted(_axes(len(shape), axis)):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    shape = a.shape
    return _emit(
        "sum",
        np.asarray(a.value.sum(axis=axis, keepdims=keepdims)),
        (a,),
        lambda g: (_expand(g, shape, axis, keepdims).copy(),),
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    shape = a.shape
    n = int(np.prod([shape[ax] for ax in _axes(len(shape), axis)])) if shape else 1
    return _emit(
        "mean",
        np.asarray(a.value.mean(axis=axis, keepdims=keepdims)),
        (a,),
        lambda g: (_expand(g, shape, axis, keepdims) / n,),
    )


def variance(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by the count, not count - 1)."""
    a = _lift(a)
    shape = a.shape
    n = int(np.prod([shape[ax] for ax in _axes(len(shape), axis)])) if shape else 1
    centred = a.value - a.value.mean(axis=axis, keepdims=True)
    out = np.asarray((centred**2).mean(axis=axis, keepdims=keepdims))
    return _emit("variance", out, (a,), lambda g: (_expand(g, shape, axis, keepdims) * (2.0 / n) * centred,))


def max(a, axis: int | None = None) -> Tensor:
    """Maximum; the gradient flows to the first maximal element only."""
    a = _lift(a)
    v = a.value
    if v.size == 0:
        raise ShapeError("max: empty operand")
    if axis is None:
        flat = int(np.argmax(v))

        def vjp(g):
            out = np.zeros(v.size)
            out[flat] = float(np.asarray(g).reshape(-1)[0])
            return (out.reshape(v.shape),)

        return _emit("max", np.asarray(v.reshape(-1)[flat]), (a,), vjp)
    idx = np.expand_dims(np.argmax(v, axis=axis), axis)

    def vjp(g):
        out = np.zeros(v.shape)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _emit("max", np.take_along_axis(v, idx, axis=axis).squeeze(axis), (a,), vjp)


# --------------------------------------------------------------------------
# unary element-wise


def abs(a) -> Tensor:
    a = _lift(a)
    sign = np.sign(a.value)
    return _emit("abs", np.abs(a.value), (a,), lambda g: (g * sign,))


def sin(a) -> Tensor:
    a = _lift(a)
    c = np.cos(a.value)
    return _emit("sin", np.sin(a.value), (a,), lambda g: (g * c,))


def cos(a) -> Tensor:
    a = _lift(a)
    s = np.sin(a.value)
    return _emit("cos", np.cos(a.value), (a,), lambda g: (-g * s,))


def exp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def sqrt(a) -> Tensor:
    """Square root of the input clamped to >= 0."""
    a = _lift(a)
    x = np.maximum(a.value, 0.0)
    out = np.sqrt(x)
    positive = x > 0
    safe = np.where(positive, out, 1.0)
    return _emit("sqrt", out, (a,), lambda g: (np.where(positive, g * 0.5 / safe, 0.0),))


def square(a) -> Tensor:
    a = _lift(a)
    v = a.value
    return _emit("square", v * v, (a,), lambda g: (2.0 * g * v,))


def power(a, k: float) -> Tensor:
    """Raise to a constant real exponent."""
    a = _lift(a)
    k = float(k)
    v = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(v, k)
    if k == 0.0:
        return _emit("power", out, (a,), lambda g: (np.zeros_like(v),))
    return _emit("power", out, (a,), lambda g: (g * k * np.power(v, k - 1.0),))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.value)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    v = a.value
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


# --------------------------------------------------------------------------
# structure


def reshape(a, shape: Iterable[int]) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeError("stack: no operands")
    if len({t.shape for t in ts}) != 1:
        raise ShapeError(f"stack: unequal shapes {[t.shape for t in ts]}")
    out = np.stack([t.value for t in ts], axis=axis)
    n = len(ts)
    return _emit("stack", out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: {err}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concat", out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, key) -> Tensor:
    """Basic numpy indexing/slicing."""
    a = _lift(a)
    shape = a.shape
    try:
        out = a.value[key]
    except IndexError as err:
        raise ShapeError(f"take: {err}") from None

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _emit("take", np.array(out), (a,), vjp)
