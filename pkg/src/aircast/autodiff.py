"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in row-major numpy arrays. Every primitive checks its inputs,
computes the forward value, and (when gradients are being tracked) appends a
tape entry holding the output, the input tensors, and a closure that turns the
output cotangent into input cotangents. backward() replays the tape once in
reverse; the tape is rebuilt on every forward pass and confined to one thread.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_state = threading.local()


def _tape() -> list:
    if not hasattr(_state, "tape"):
        _state.tape = []
    return _state.tape


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def tape_size() -> int:
    return len(_tape())


def clear_tape() -> None:
    _tape().clear()


class Tensor:
    """Immutable-by-convention dense array node.

    Leaf tensors created with requires_grad=True own a zero-initialized grad
    buffer; tensors produced by primitives keep requires_grad set but receive
    gradients only transiently during backward().
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("non-finite value at tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named trainable leaf; names must be unique within a model."""

    __slots__ = ("name",)

    def __init__(self, values, name: str):
        super().__init__(values, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    out = Tensor(values)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape().append((out, inputs, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _result(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _result(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)

    return _result(ad * bd, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (-g,)

    return _result(-a.data, (a,), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _result(y, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # evaluate on the negative half-line to avoid overflowing exp
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _result(y, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def vjp(g):
        return (g * y,)

    return _result(y, (a,), vjp)


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated stably; gradient is sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    y = np.logaddexp(0.0, x)

    def vjp(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)

    return _result(y, (a,), vjp)


def absolute(a) -> Tensor:
    """Elementwise |x| with sign(x) subgradient (0 at 0)."""
    a = as_tensor(a)
    x = a.data

    def vjp(g):
        return (g * np.sign(x),)

    return _result(np.abs(x), (a,), vjp)


def _check_axis(a: Tensor, axis) -> None:
    if axis is not None and not (-a.data.ndim <= axis < a.data.ndim):
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")


def reduce_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    sh = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, sh).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), sh).copy(),)

    return _result(a.data.sum(axis=axis), (a,), vjp)


def reduce_mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    sh = a.shape
    count = a.data.size if axis is None else sh[axis]
    if count == 0:
        raise DimensionError("mean over an empty axis")

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, sh).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, sh).copy(),)

    return _result(a.data.mean(axis=axis), (a,), vjp)


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        values = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} to {shape}") from None

    def vjp(g):
        return (g.reshape(old),)

    return _result(values, (a,), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack of zero tensors")
    sh = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != sh:
            raise DimensionError(f"stack: mixed shapes {sh} and {t.shape}")

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=axis),
                   tuple(tensors), vjp)


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols expects 2-D, got {a.shape}")
    if not (0 <= start < stop <= a.shape[1]):
        raise DimensionError(f"column range [{start}:{stop}) invalid for {a.shape}")
    sh = a.shape

    def vjp(g):
        full = np.zeros(sh)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop].copy(), (a,), vjp)


def safe_inv_sqrt(a) -> Tensor:
    """x^(-1/2) where x > 0, exactly 0 elsewhere (degree-normalization guard)."""
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    y = np.zeros_like(x)
    y[pos] = 1.0 / np.sqrt(x[pos])

    def vjp(g):
        gx = np.zeros_like(x)
        gx[pos] = -0.5 * y[pos] / x[pos]
        return (g * gx,)

    return _result(y, (a,), vjp)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's grad buffer.

    The loss must be scalar. Entries are consumed in reverse recording order,
    which is a valid topological order for a define-by-run tape; the tape is
    cleared afterwards. A constant loss (nothing recorded against it) is a
    no-op: all gradients are trivially zero.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = _tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.grad is not None:
        loss.grad += 1.0
    for out, inputs, vjp in reversed(tape):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        cotangents = vjp(g)
        for t, ct in zip(inputs, cotangents):
            if not t.requires_grad or ct is None:
                continue
            if t.grad is not None:
                t.grad += ct
            else:
                prev = grads.get(id(t))
                if prev is None:
                    grads[id(t)] = np.array(ct, dtype=np.float64, copy=True)
                else:
                    prev += ct
    tape.clear()


def finite_diff_check(f: Callable[[], Tensor],
                      params: Sequence[Parameter],
                      eps: float = 1e-5) -> float:
    """Compare backward() gradients of f against central differences.

    Returns the max over all elements of the listed parameters of
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12). f is re-evaluated
    with recording disabled for every probe, so it must be deterministic.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    clear_tape()
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = f().item()
                flat[i] = orig - eps
                f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(aflat[i] - numeric) / (abs(aflat[i]) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
    return worst
