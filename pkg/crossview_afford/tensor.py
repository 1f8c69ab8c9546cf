"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation whose inputs require grad appends an entry to
the active :class:`ComputationTape`. :func:`backward` replays that tape in
exact reverse execution order. Work done inside :func:`no_grad`, or on values
passed through :func:`stop_gradient`, never reaches the tape.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax as _log_softmax
from scipy.special import softmax as _softmax

from .errors import ConfigError, DomainError, LabelError, ShapeError

log = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_local = threading.local()


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Tensor:
    """An immutable float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(
        self,
        data: object,
        requires_grad: bool = False,
        *,
        name: str | None = None,
        copy: bool = True,
    ) -> None:
        array = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
        if not array.flags.c_contiguous:
            array = array.copy(order="C")
        if any(n <= 0 for n in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {array.shape}")
        self.data: np.ndarray = _freeze(array)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # --- introspection ---

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # --- operators ---

    def __add__(self, other: object) -> Tensor:
        return add(self, other)

    def __radd__(self, other: object) -> Tensor:
        return add(other, self)

    def __sub__(self, other: object) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: object) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: object) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: object) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: object) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: object) -> Tensor:
        return getitem(self, index)

    # --- method forms ---

    @property
    def T(self) -> Tensor:  # noqa: N802
        return transpose(self)

    def sum(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        return tensor_sum(self, axis)

    def mean(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        return tensor_mean(self, axis)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def relu(self) -> Tensor:
        return relu(self)

    def log(self) -> Tensor:
        return log_(self)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TapeEntry:
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    grad_fn: GradFn


class ComputationTape:
    """Ordered record of differentiable operations executed on one thread.

    Use as a context manager to make it the active tape::

        with ComputationTape() as tape:
            loss = ...
            tape.backward(loss)
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> ComputationTape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()

    def backward(self, loss: Tensor, *, retain: bool = False) -> None:
        """Populate ``.grad`` on every tensor that requires grad and reaches *loss*."""
        if loss.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            log.debug("backward on a loss that does not require grad; nothing to do")
            return

        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        owners: dict[int, Tensor] = {id(loss): loss}
        for entry in reversed(self.entries):
            upstream = grads.get(id(entry.output))
            if upstream is None:
                continue
            for tensor, local in zip(entry.inputs, entry.grad_fn(upstream)):
                if local is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                owners[key] = tensor
                grads[key] = grads[key] + local if key in grads else local

        for key, value in grads.items():
            owners[key].grad = _freeze(np.array(value, dtype=np.float64))
        if not retain:
            self.clear()


def _tape_stack() -> list[ComputationTape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = [ComputationTape()]
    return stack


def current_tape() -> ComputationTape:
    return _tape_stack()[-1]


def backward(loss: Tensor, tape: ComputationTape | None = None) -> None:
    (tape or current_tape()).backward(loss)


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed operations without recording them."""
    previous = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


def stop_gradient(t: Tensor) -> Tensor:
    """Value-identical tensor that contributes no gradient upstream."""
    return Tensor(t.data, copy=False)


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------

def _lift(value: object) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    out = Tensor(data, copy=False)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(TapeEntry(op, out, inputs, grad_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a: object, b: object) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    return _record(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: object, b: object) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    return _record(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: object, b: object) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    return _record(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: object, b: object) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    return _record(
        "div", a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def log_(t: Tensor) -> Tensor:
    if np.any(t.data <= 0):
        raise DomainError("log of a non-positive value")
    return _record("log", np.log(t.data), (t,), lambda g: (g / t.data,))


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    return _record("relu", np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Shape and reductions
# ---------------------------------------------------------------------------

def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = t.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {t.shape} to {tuple(shape)}") from e
    return _record("reshape", data, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {t.shape}")
    return _record("transpose", t.data.T, (t,), lambda g: (g.T,))


def tensor_sum(t: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape),)

    return _record("sum", np.sum(t.data, axis=axis), (t,), grad_fn)


def tensor_mean(t: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    count = t.size if axis is None else int(np.prod([t.shape[a] for a in np.atleast_1d(axis)]))
    return tensor_sum(t, axis) * (1.0 / count)


def getitem(t: Tensor, index: object) -> Tensor:
    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(t.shape)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", t.data[index], (t,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record("concat", data, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of an empty sequence")
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in tensors]}") from e
    return _record(
        "stack", data, tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


# ---------------------------------------------------------------------------
# Linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _record("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Zero-padded cross-correlation of a c_in×h×w map with a c_out×c_in×k×k kernel."""
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects c×h×w input and 4-d kernel, got {x.shape}, {kernel.shape}")
    c_out, c_in, k, kw = kernel.shape
    if k != kw or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd size, got {k}×{kw}")
    if c_in != x.shape[0]:
        raise ShapeError(f"conv2d: kernel expects {c_in} channels, input has {x.shape[0]}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / padding {padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")

    _, h, w = x.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"conv2d: output size {h_out}×{w_out} is not positive")

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :h_out, :w_out]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h_out * w_out, c_in * k * k)
    weight = kernel.data.reshape(c_out, -1)
    out = (cols @ weight.T).T.reshape(c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        flat = g.reshape(c_out, -1)
        d_kernel = (flat @ cols).reshape(kernel.shape)
        d_x = None
        if x.requires_grad:
            d_cols = (flat.T @ weight).reshape(h_out, w_out, c_in, k, k)
            d_padded = np.zeros_like(padded)
            for i in range(k):
                for j in range(k):
                    d_padded[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += (
                        d_cols[:, :, :, i, j].transpose(2, 0, 1)
                    )
            d_x = d_padded[:, padding:padding + h, padding:padding + w]
        if bias is None:
            return d_x, d_kernel
        return d_x, d_kernel, g.sum(axis=(1, 2))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record("conv2d", out, inputs, grad_fn)


# ---------------------------------------------------------------------------
# Normalisation, pooling, losses
# ---------------------------------------------------------------------------

def softmax_rows(t: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``t / temperature``."""
    if not temperature > 0:
        raise ConfigError(f"softmax temperature must be > 0, got {temperature}")
    if t.ndim not in (1, 2):
        raise ShapeError(f"softmax_rows expects a vector or matrix, got shape {t.shape}")
    y = _softmax(t.data / temperature, axis=-1)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)) / temperature,)

    return _record("softmax_rows", y, (t,), grad_fn)


def gap(t: Tensor) -> Tensor:
    """Global average pooling of a c×h×w map to a length-c vector."""
    if t.ndim != 3:
        raise ShapeError(f"gap expects c×h×w, got {t.shape}")
    _, h, w = t.shape
    return _record(
        "gap", t.data.mean(axis=(1, 2)), (t,),
        lambda g: (np.broadcast_to(g[:, None, None] / (h * w), t.shape),),
    )


def channel_max(t: Tensor) -> Tensor:
    """Per-pixel maximum over channels; ties route gradient to the lowest channel."""
    if t.ndim != 3:
        raise ShapeError(f"channel_max expects c×h×w, got {t.shape}")
    winner = np.argmax(t.data, axis=0)[None]
    out = np.take_along_axis(t.data, winner, axis=0)[0]

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(t.shape)
        np.put_along_axis(full, winner, g[None], axis=0)
        return (full,)

    return _record("channel_max", out, (t,), grad_fn)


def l2_loss(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean norm of ``a - b``."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeError(f"l2_loss: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data
    norm = float(np.sqrt(np.sum(diff * diff)))

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if norm == 0.0:
            zero = np.zeros(a.shape)
            return zero, zero
        local = g * diff / norm
        return local, -local

    return _record("l2_loss", np.array(norm), (a, b), grad_fn)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy expects a logit vector, got shape {logits.shape}")
    n_classes = logits.shape[0]
    if not 0 <= label < n_classes:
        raise LabelError(f"label {label} outside [0, {n_classes})")
    log_p = _log_softmax(logits.data)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        local = np.exp(log_p)
        local[label] -= 1.0
        return (g * local,)

    return _record("cross_entropy", np.array(-log_p[label]), (logits,), grad_fn)
