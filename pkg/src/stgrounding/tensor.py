"""Float64 tensors with tape-recorded reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and with at least one
input that requires a gradient, are appended to that tape in execution order.
``Tape.backward`` then replays them in exact reverse order. Without an active
tape nothing is recorded, which doubles as an inference mode.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "ShapeError",
    "MaskError",
    "tensor",
    "backward",
    "add",
    "mul",
    "matmul",
    "concat",
    "stack",
    "take",
    "exp",
    "log",
    "sigmoid",
    "relu",
    "absolute",
    "maximum",
    "minimum",
    "clamp_min",
    "softmax_masked",
    "layer_norm",
    "linear",
    "dropout",
    "stop_gradient",
]

LOG_EPS = 1e-12


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


class MaskError(ValueError):
    pass


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    # make ndarray <op> Tensor defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(_as_tensor(other), reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_as_tensor(other), self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def detach(self) -> "Tensor":
        return Tensor(self.data)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap an op result, checking finiteness and recording it on the tape."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite output from '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape.nodes.append(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every tensor on ``tape`` that ``loss`` depends on.

    Leaf gradients accumulate across calls; intermediate gradients are reset
    at the start of each call so repeated calls stay consistent.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if len(tape) == 0:
        raise ValueError("backward called with an empty tape")
    for node in tape.nodes:
        node.grad = None
    seed = np.ones_like(loss.data)
    if loss._backward is None:
        loss._accumulate(seed)
        return
    loss.grad = seed
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        node._backward(g)


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), bw, "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data

    def bw(g):
        a._accumulate(-g * out * out)

    return _make(out, (a,), bw, "reciprocal")


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)

    def bw(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(a.data ** p, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out)

    return _make(out, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g / a.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), bw, "log")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), bw, "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def bw(g):
        a._accumulate(g * pos)

    return _make(np.where(pos, a.data, 0.0), (a,), bw, "relu")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bw(g):
        a._accumulate(g * sign)

    return _make(np.abs(a.data), (a,), bw, "abs")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data > floor

    def bw(g):
        a._accumulate(g * keep)

    return _make(np.where(keep, a.data, floor), (a,), bw, "clamp_min")


# reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape

    def bw(g):
        a._accumulate(g.reshape(src))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        a._accumulate(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise TypeError("index with integer arrays, not Tensors")

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _make(np.array(a.data[index], dtype=np.float64), (a,), bw, "getitem")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; repeated indices accumulate gradients."""
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(np.moveaxis(full, ax, 0), idx, np.moveaxis(g, ax, 0))
        a._accumulate(full)

    if idx.ndim != 1:
        raise ShapeError("take expects a 1-D index array")
    return _make(np.take(a.data, idx, axis=ax), (a,), bw, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=ax)):
            if t.requires_grad:
                t._accumulate(part)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def broadcast_to(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _make(np.array(np.broadcast_to(a.data, shape)), (a,), bw, "broadcast_to")


def stop_gradient(a: Tensor) -> Tensor:
    """Identity in value, gradient barrier toward ``a``."""
    return Tensor(a.data)


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the trailing dimension of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    if weight.shape[0] == 1:
        # BLAS matrix-vector kernels round differently depending on the row's
        # position; a row-wise reduction keeps rows independent bit for bit
        out = (x2 * weight.data[0]).sum(axis=1, keepdims=True)
    else:
        out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[0])
        if x.requires_grad:
            x._accumulate((g2 @ weight.data).reshape(x.shape))
        if weight.requires_grad:
            weight._accumulate(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    return _make(out.reshape(lead + (weight.shape[0],)), parents, bw, "linear")


# normalization ---------------------------------------------------------------

def softmax_masked(logits: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` False entries get exactly 0.

    ``mask`` broadcasts against ``logits``. A row with no allowed entry raises
    :class:`MaskError` rather than producing NaN.
    """
    x = logits.data
    if mask is None:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        allowed = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not allowed.any(axis=-1).all():
            raise MaskError("softmax_masked: a row has every entry masked")
        masked = np.where(allowed, x, -np.inf)
        shifted = masked - masked.max(axis=-1, keepdims=True)
        e = np.where(allowed, np.exp(shifted), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        logits._accumulate(out * (g - inner))

    return _make(out, (logits,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: feature dim {d} vs gain {gain.shape}, shift {shift.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def bw(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if shift.requires_grad:
            shift._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(dx)

    return _make(out, (x, gain, shift), bw, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


def sinusoid_table(n: int, d: int, base: float = 10000.0) -> np.ndarray:
    """Rows ``[sin(t/base^(2i/d)), cos(t/base^(2i/d))]`` interleaved."""
    if d % 2:
        raise ValueError(f"sinusoidal encoding needs an even dimension, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = base ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos / freq)
    table[:, 1::2] = np.cos(pos / freq)
    return table


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, index, step: float = 1e-5) -> float:
    """Central finite difference of ``fn`` w.r.t. ``arr[index]`` (in place)."""
    old = arr[index]
    arr[index] = old + step
    up = fn()
    arr[index] = old - step
    down = fn()
    arr[index] = old
    return (up - down) / (2.0 * step)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
