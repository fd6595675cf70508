# app/services/autodiff.py
# Define-by-run reverse-mode autodiff over float64 numpy arrays.
#
# Ops record onto the innermost active Tape of the current thread:
#   with Tape() as tape:
#       loss = cross_entropy(y, softmax(dense_forward(x, W, b)))
#   backward(loss, tape)
# Outside a tape (or inside no_grad()) ops compute values only.

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from app.core.exceptions import ContractViolation, DimensionError

LOG_CLAMP_EPS = 1e-12

_state = threading.local()


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", copy: bool = True):
        self.data = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeEntry:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    op: str


class Tape:
    """Ordered record of differentiable ops; inputs always precede the ops that use them."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.entries)

    def tensors(self) -> Iterator[Tensor]:
        seen: set[int] = set()
        for entry in self.entries:
            for t in (*entry.inputs, entry.output):
                if id(t) not in seen:
                    seen.add(id(t))
                    yield t


def _stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording; ops inside produce constants."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(out_data, copy=False)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.entries.append(TapeEntry(inputs=inputs, output=out, backward=backward_fn, op=op))
    return out


# -- Ops ----------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not conform")

    def _reduce(g: np.ndarray, shape: tuple) -> np.ndarray:
        if g.shape == shape:
            return g
        return np.full(shape, g.sum()) if shape else np.array(g.sum())

    return _record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_reduce(g, a.shape), _reduce(g, b.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product of equal-shape tensors, or a tensor times a constant."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _record("mul_const", a.data * c, (a,), lambda g: (g * c,))
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not conform")
    return _record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def tensor_sum(x: Tensor) -> Tensor:
    return _record("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def take_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def _backward(g):
        full = np.zeros(x.shape)
        full[start:stop] = g
        return (full,)

    return _record("take_rows", x.data[start:stop].copy(), (x,), _backward)


def scale_rows(x: Tensor, weights: np.ndarray) -> Tensor:
    """Multiply row i of a [batch, C] tensor by the constant weights[i]."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    if w.shape[0] != x.shape[0]:
        raise DimensionError(f"scale_rows: {w.shape[0]} weights for batch of {x.shape[0]}")
    return _record("scale_rows", x.data * w, (x,), lambda g: (g * w,))


def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise DimensionError(
            f"dense_forward: x{x.shape} @ W{W.shape} + b{b.shape} do not conform"
        )

    def _backward(g):
        return g @ W.data.T, x.data.T @ g, g.sum(axis=0)

    return _record("dense", x.data @ W.data + b.data, (x, W, b), _backward)


def conv2d_forward(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [batch, ch, h, w] with [out, ch, kh, kw] kernels."""
    if x.data.ndim != 4 or kernels.data.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv2d_forward: input {x.shape} and kernels {kernels.shape} do not conform")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d_forward: invalid stride={stride} padding={padding}")
    _, _, h, w = x.shape
    _, _, kh, kw = kernels.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d_forward: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :oh, :ow]
    out = np.einsum("bchwij,ocij->bohw", windows, kernels.data, optimize=True)

    def _backward(g):
        d_kernels = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        d_cols = np.einsum("bohw,ocij->bchwij", g, kernels.data, optimize=True)
        d_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                d_xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d_cols[..., i, j]
        return d_xp[:, :, padding:padding + h, padding:padding + w], d_kernels

    return _record("conv2d", out, (x, kernels), _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def global_avg_pool(x: Tensor) -> Tensor:
    """[batch, ch, h, w] -> [batch, ch]"""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4 dims, got {x.shape}")
    area = x.shape[2] * x.shape[3]

    def _backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, x.shape).copy(),)

    return _record("gap", x.data.mean(axis=(2, 3)), (x,), _backward)


def channel_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    mean: Optional[np.ndarray] = None,
    var: Optional[np.ndarray] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel affine over constant (running) statistics; stats are never differentiated."""
    channels = x.shape[1]
    if scale.shape != (channels,) or shift.shape != (channels,):
        raise DimensionError(f"channel_norm: {channels} channels vs scale {scale.shape} shift {shift.shape}")
    view = (1, channels) + (1,) * (x.data.ndim - 2)
    if mean is None:
        normed = x.data
        inv_std = np.ones(channels)
    else:
        inv_std = 1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + eps)
        normed = (x.data - np.asarray(mean).reshape(view)) * inv_std.reshape(view)
    out = normed * scale.data.reshape(view) + shift.data.reshape(view)
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))

    def _backward(g):
        d_x = g * (scale.data * inv_std).reshape(view)
        return d_x, (g * normed).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return _record("channel_norm", out, (x, scale, shift), _backward)


def softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax expects [batch, C>=2], got {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _record("softmax", y, (logits,), _backward)


def _row_weights(weights: Optional[np.ndarray], batch: int) -> np.ndarray:
    if weights is None:
        return np.ones(batch)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != batch:
        raise DimensionError(f"{w.shape[0]} row weights for batch of {batch}")
    return w


def cross_entropy(target, pred: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean over the batch of w_i * -sum_k target_ik * log(clamp(pred_ik, eps, 1)).

    target is a constant; gradients flow into pred only.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise DimensionError(f"cross_entropy: target {t.shape} vs pred {pred.shape}")
    batch = pred.shape[0]
    w = _row_weights(weights, batch)
    clamped = np.clip(pred.data, LOG_CLAMP_EPS, 1.0)
    per_row = -(t * np.log(clamped)).sum(axis=1)
    inside = (pred.data >= LOG_CLAMP_EPS) & (pred.data <= 1.0)

    def _backward(g):
        return (-float(g) * w[:, None] * t / clamped * inside / batch,)

    return _record("cross_entropy", np.array((w * per_row).sum() / batch), (pred,), _backward)


def mse_distance(target, pred: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean over the batch of w_i * ||target_i - pred_i||^2; target is a constant."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise DimensionError(f"mse_distance: target {t.shape} vs pred {pred.shape}")
    batch = pred.shape[0]
    w = _row_weights(weights, batch)
    diff = pred.data - t
    per_row = (diff ** 2).reshape(batch, -1).sum(axis=1)

    def _backward(g):
        scale = (2.0 * float(g) / batch) * w.reshape((batch,) + (1,) * (diff.ndim - 1))
        return (scale * diff,)

    return _record("mse", np.array((w * per_row).sum() / batch), (pred,), _backward)


# -- Gradients ---------------------------------------------------------------

def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad of every requires_grad tensor on the tape with d(loss)/d(tensor)."""
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for entry in reversed(tape.entries):
        g = grads.get(id(entry.output))
        if g is None:
            continue
        for tensor, g_in in zip(entry.inputs, entry.backward(g)):
            if g_in is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = np.array(g_in, dtype=np.float64)

    for tensor in tape.tensors():
        if tensor.requires_grad:
            tensor.grad = grads.get(id(tensor), np.zeros(tensor.shape))
    if loss.requires_grad:
        loss.grad = grads[id(loss)]


def finite_difference_check(
    fn: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    denominator_floor: float = 1e-8,
) -> float:
    """Max relative error between autodiff and central-difference gradients of fn at x.

    fn must build its graph from x (x.requires_grad is forced on) and return a scalar.
    """
    if h <= 0:
        raise ContractViolation("finite_difference_check needs h > 0")
    x.requires_grad = True
    with Tape() as tape:
        loss = fn(x)
    backward(loss, tape)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()

    original = x.data.copy()
    base = original.reshape(-1)
    numeric = np.zeros(x.size)
    # x must own a C-ordered buffer so the flat view below writes through
    x.data = original.copy()
    flat = x.data.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            flat[k] = base[k] + h
            up = fn(x).item()
            flat[k] = base[k] - h
            down = fn(x).item()
            flat[k] = base[k]
            numeric[k] = (up - down) / (2.0 * h)
    x.data = original
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), denominator_floor)
    return float((np.abs(analytic - numeric) / denom).max()) if x.size else 0.0
