"""Dense tensor with reverse-mode automatic differentiation.

Tensors wrap a flat row-major numpy buffer (float32 or float64). Operations
executed while a tape is active record backward closures on that tape;
``backward`` replays the tape in reverse, accumulating gradients into every
leaf marked ``requires_grad``. A tape lives for one forward/backward pass and
is then discarded.

Broadcasting follows trailing-dimension rules: a dimension broadcasts iff it
equals 1.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .special import digamma_np, lgamma_np, trigamma_np

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "backward",
    "elementwise",
    "matmul",
    "bmm",
    "reduce",
    "lgamma",
    "digamma",
    "sqrt",
    "reshape",
    "transpose",
    "flip",
    "concat",
    "stack",
    "index_axis",
    "ShapeError",
    "DomainError",
    "GraphError",
]

Scalar = Union[int, float]
TensorLike = Union["Tensor", np.ndarray, Scalar]

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input values lie outside the numeric domain of the operation."""


class GraphError(RuntimeError):
    """The computation graph / tape is in an invalid state."""


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    __slots__ = ("nodes",)

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


@contextmanager
def tape() -> Iterator[Tape]:
    """Activate a fresh tape for the duration of the block."""
    t = Tape()
    _TAPE_STACK.append(t)
    try:
        yield t
    finally:
        _TAPE_STACK.pop()


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce("max", self, axes, keepdims)

    def reshape(self, *dims):
        if len(dims) == 1 and isinstance(dims[0], (tuple, list)):
            dims = tuple(dims[0])
        return reshape(self, dims)


def _scalar_err(t: Tensor):
    raise ShapeError(f"expected a scalar tensor, got shape {t.shape}")


def _coerce(value: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def _record(out: Tensor, parents: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    t = _active_tape()
    if t is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        t.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast during the forward pass."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    for da, db in zip(reversed(a.shape), reversed(b.shape)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable")


# -- elementwise ops ---------------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _coerce(a), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    out = Tensor(a.data + b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _record(out, (a, b), backward_fn)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _coerce(a), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    out = Tensor(a.data - b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _record(out, (a, b), backward_fn)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _coerce(a), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    out = Tensor(a.data * b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), backward_fn)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _coerce(a), _coerce(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = Tensor(a.data / b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(out, (a, b), backward_fn)


def neg(a: TensorLike) -> Tensor:
    a = _coerce(a)
    out = Tensor(-a.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(-g)

    return _record(out, (a,), backward_fn)


def exp(a: TensorLike) -> Tensor:
    a = _coerce(a)
    y = np.exp(a.data)
    if not np.all(np.isfinite(y)):
        raise DomainError("exp overflow produced non-finite values")
    out = Tensor(y)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * y)

    return _record(out, (a,), backward_fn)


def log(a: TensorLike) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    out = Tensor(np.log(a.data))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _record(out, (a,), backward_fn)


def sqrt(a: TensorLike) -> Tensor:
    a = _coerce(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt requires nonnegative input")
    y = np.sqrt(a.data)
    out = Tensor(y)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * 0.5 / y)

    return _record(out, (a,), backward_fn)


def sigmoid(a: TensorLike) -> Tensor:
    a = _coerce(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    y = y.astype(x.dtype, copy=False)
    out = Tensor(y)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return _record(out, (a,), backward_fn)


def tanh(a: TensorLike) -> Tensor:
    a = _coerce(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return _record(out, (a,), backward_fn)


def relu(a: TensorLike) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _record(out, (a,), backward_fn)


def softplus(a: TensorLike) -> Tensor:
    # overflow-safe branch: max(x, 0) + log1p(exp(-|x|))
    a = _coerce(a)
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(y.astype(x.dtype, copy=False))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            a._accumulate(g * s)

    return _record(out, (a,), backward_fn)


_UNARY = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "neg": neg,
}

_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a: TensorLike, b: Optional[TensorLike] = None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op_kind in _BINARY:
        if b is None:
            raise ShapeError(f"binary op '{op_kind}' needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        if b is not None:
            raise ShapeError(f"unary op '{op_kind}' takes one operand")
        return _UNARY[op_kind](a)
    raise ShapeError(f"unknown elementwise op '{op_kind}'")


# -- special functions -------------------------------------------------------


def lgamma(a: TensorLike) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise DomainError("lgamma requires strictly positive input")
    out = Tensor(lgamma_np(a.data).astype(a.data.dtype, copy=False))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * digamma_np(a.data))

    return _record(out, (a,), backward_fn)


def digamma(a: TensorLike) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise DomainError("digamma requires strictly positive input")
    out = Tensor(digamma_np(a.data).astype(a.data.dtype, copy=False))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * trigamma_np(a.data))

    return _record(out, (a,), backward_fn)


# -- linear algebra ----------------------------------------------------------


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _record(out, (a, b), backward_fn)


def bmm(a: TensorLike, b: TensorLike) -> Tensor:
    """Batched matmul over one or more leading dimensions."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 3 or b.ndim < 3 or a.ndim != b.ndim:
        raise ShapeError(f"bmm expects matching rank >= 3 operands, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"incompatible batched shapes: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _record(out, (a, b), backward_fn)


# -- reductions --------------------------------------------------------------


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(ax + ndim if ax < 0 else ax for ax in axes)
    for ax in axes:
        if not 0 <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes {axes}")
    return axes


def reduce(kind: str, a: TensorLike, axes=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes_t = _normalize_axes(axes, a.ndim)
    if kind == "sum":
        out_data = a.data.sum(axis=axes_t, keepdims=keepdims)
    elif kind == "mean":
        out_data = a.data.mean(axis=axes_t, keepdims=keepdims)
    elif kind == "max":
        out_data = a.data.max(axis=axes_t, keepdims=keepdims)
    else:
        raise ShapeError(f"unknown reduction '{kind}'")
    out = Tensor(np.asarray(out_data, dtype=a.data.dtype))

    count = 1
    for ax in axes_t:
        count *= a.shape[ax]

    def backward_fn(g: np.ndarray) -> None:
        if not a.requires_grad:
            return
        g_full = g if keepdims else np.expand_dims(g, axes_t)
        if kind == "sum":
            a._accumulate(np.broadcast_to(g_full, a.shape))
        elif kind == "mean":
            a._accumulate(np.broadcast_to(g_full / count, a.shape))
        else:  # max: route to the first (lowest flat index) maximal element
            m = a.data.max(axis=axes_t, keepdims=True)
            hit = a.data == m
            # keep only the first hit along the reduced axes
            moved = np.moveaxis(hit, axes_t, range(a.ndim - len(axes_t), a.ndim))
            lead = moved.shape[: a.ndim - len(axes_t)]
            flat = moved.reshape(lead + (-1,))
            first = np.zeros_like(flat)
            idx = flat.argmax(axis=-1)
            np.put_along_axis(first, idx[..., None], 1, axis=-1)
            mask = np.moveaxis(first.reshape(moved.shape), range(a.ndim - len(axes_t), a.ndim), axes_t)
            a._accumulate(np.broadcast_to(g_full, a.shape) * mask)

    return _record(out, (a,), backward_fn)


# -- shape manipulation ------------------------------------------------------


def reshape(a: TensorLike, dims: Sequence[int]) -> Tensor:
    a = _coerce(a)
    out = Tensor(a.data.reshape(tuple(dims)))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _record(out, (a,), backward_fn)


def transpose(a: TensorLike, perm: Sequence[int]) -> Tensor:
    a = _coerce(a)
    perm = tuple(perm)
    if sorted(perm) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {perm} for rank {a.ndim}")
    inv = tuple(np.argsort(perm))
    out = Tensor(a.data.transpose(perm))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _record(out, (a,), backward_fn)


def flip(a: TensorLike, axis: int) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.flip(a.data, axis=axis).copy())

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.flip(g, axis=axis))

    return _record(out, (a,), backward_fn)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _record(out, ts, backward_fn)


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in ts], axis=axis))

    def backward_fn(g: np.ndarray) -> None:
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _record(out, ts, backward_fn)


def index_axis(a: TensorLike, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis``, removing that axis."""
    a = _coerce(a)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    out = Tensor(np.take(a.data, index, axis=axis))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.ndim
            sl[axis] = index
            full[tuple(sl)] = g
            a._accumulate(full)

    return _record(out, (a,), backward_fn)


# -- backward pass -----------------------------------------------------------


def backward(loss: Tensor, t: Optional[Tape] = None) -> None:
    """Run reverse-mode accumulation from a scalar loss over a tape.

    Repeated calls without resetting leaf grads accumulate.
    """
    if t is None:
        t = _active_tape()
    if t is None:
        raise GraphError("no active tape and none supplied")
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.requires_grad and loss._backward is not None and loss not in t.nodes:
        raise GraphError("loss tensor was not recorded on this tape")
    loss.grad = np.ones_like(loss.data)
    seen_loss = False
    for node in reversed(t.nodes):
        if node is loss:
            seen_loss = True
        if not seen_loss:
            continue
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
    # intermediate grads are scratch; clear them so a replayed backward over the
    # same tape accumulates cleanly into the leaves only
    for node in t.nodes:
        if node._backward is not None and node is not loss:
            node.grad = None
