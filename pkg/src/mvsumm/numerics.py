"""Reverse-mode autodiff over dense numpy arrays, plus the optimizer and
recurrent cell built on it.

Design: define-by-run tape. Each op eagerly computes a numpy forward value
and, when gradients are enabled and an input requires them, records a
closure that scatters the output gradient back to its parents. `backward`
topologically walks the tape from a scalar loss. Two precisions are
supported end to end: float64 for checking, float32 for training. Any op
producing a NaN or Inf from finite inputs raises immediately.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_FLOAT_KINDS = (np.float32, np.float64)
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure-inference speed)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A node in the tape: numpy value, optional gradient buffer, parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_KINDS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _check_dtypes(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape numpy broadcast it from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d node into .grad over the whole tape. The loss
    must be scalar. Existing gradients are added to, not replaced."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    if not loss.requires_grad:
        raise ValueError("loss does not require gradients")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes("add", a, b)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw, "add")


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes("mul", a, b)
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes("div", a, b)
    data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")
    _check_dtypes("matmul", a, b)
    data = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bw, "matmul")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - t * t))

    return _make(t, (a,), bw, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bw, "sigmoid")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), bw, "relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    return _make(y, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def bw(g):
        _accum(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (a,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance, then scale
    and shift. gain/bias broadcast over leading axes."""
    _check_dtypes("layer_norm", x, gain, bias)
    n = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xm = x.data - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xm * inv
    data = xn * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - gain.data.ndim))
        _accum(gain, _unbroadcast((g * xn).sum(axis=lead) if lead else g * xn, gain.data.shape))
        _accum(bias, _unbroadcast(g.sum(axis=lead) if lead else g, bias.data.shape))
        dxn = g * gain.data
        dvar = (dxn * xm).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
        dmu = -(dxn * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 / n) * xm.sum(
            axis=-1, keepdims=True
        )
        _accum(x, dxn * inv + dvar * (2.0 / n) * xm + dmu / n)

    return _make(data, (x, gain, bias), bw, "layer_norm")


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """table (V, d) gathered by an integer id array of any shape; output
    shape ids.shape + (d,)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("embedding id out of range")
    data = table.data[ids]

    def bw(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _make(data, (table,), bw, "embedding_lookup")


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ValueError("concat of zero tensors")
    _check_dtypes("concat", *tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _accum(t, g[tuple(idx)])
            offset += size

    return _make(data, tuple(tensors), bw, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), bw, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inverse))

    return _make(data, (a,), bw, "transpose")


def getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accum(a, full)

    return _make(data, (a,), bw, "getitem")


def take_positions(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along axis 1 of a (B, L, ...) tensor with per-row indices.
    idx shape (B,) selects one position per row; (B, n) selects n."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("positions must be integers")
    B = x.data.shape[0]
    if idx.shape[0] != B:
        raise ValueError("index row count does not match batch size")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[1]):
        raise ValueError("position index out of range")
    if idx.ndim == 1:
        data = x.data[np.arange(B), idx]
    elif idx.ndim == 2:
        data = x.data[np.arange(B)[:, None], idx]
    else:
        raise ValueError("positions must be 1-d or 2-d")

    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        if idx.ndim == 1:
            np.add.at(x.grad, (np.arange(B), idx), g)
        else:
            np.add.at(x.grad, (np.arange(B)[:, None], idx), g)

    return _make(data, (x,), bw, "take_positions")


def take_along_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per position: output shape is
    x.shape[:-1], value x[..., idx[...]]."""
    idx = np.asarray(idx)
    if idx.shape != x.data.shape[:-1]:
        raise ValueError("index shape must match all but the last axis")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[-1]):
        raise ValueError("index out of range along last axis")
    data = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]
    V = x.data.shape[-1]

    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        flat = x.grad.reshape(-1, V)
        np.add.at(flat, (np.arange(flat.shape[0]), idx.reshape(-1)), g.reshape(-1))

    return _make(data, (x,), bw, "take_along_last")


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a float exponent. Gradient at exact zeros is
    taken as 0 (zero entries are preserved, as in attention sharpening)."""
    p = float(p)
    data = a.data**p

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = p * a.data ** (p - 1.0)
        grad = np.where(a.data == 0.0, 0.0, grad)
        _accum(a, g * grad)

    return _make(data, (a,), bw, "power")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


# ---------------------------------------------------------------------------
# parameter initialization


def init_normal(rng: np.random.Generator, shape, scale: float = 0.02, dtype=np.float32) -> Tensor:
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


def init_zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def sinusoidal_positions(length: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table, shape (length, d_model)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and state lengths differ")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in optimizer step")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# recurrent cell


@dataclass
class LstmParams:
    w: Tensor  # (input + hidden, 4 * hidden), gate order i, f, g, o
    b: Tensor  # (4 * hidden,)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """Single LSTM step on a batch: x (B, in), h/c (B, hidden)."""
    hidden = c_prev.data.shape[-1]
    z = add(matmul(concat([x, h_prev], axis=-1), p.w), p.b)
    i = z[..., 0 * hidden : 1 * hidden]
    f = z[..., 1 * hidden : 2 * hidden]
    g = z[..., 2 * hidden : 3 * hidden]
    o = z[..., 3 * hidden : 4 * hidden]
    c = add(mul(sigmoid(f), c_prev), mul(sigmoid(i), tanh(g)))
    h = mul(sigmoid(o), tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(f, params: list[Tensor], eps: float = 1e-5) -> float:
    """Compare tape gradients of scalar f() against central differences over
    every coordinate of params. Returns the maximum relative error
    |a - n| / max(1e-8, |a| + |n|). Parameters must be float64."""
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        if not p.requires_grad:
            raise ValueError("grad_check parameters must require gradients")
    zero_grads(params)
    out = f()
    if out.data.size != 1:
        raise ValueError("grad_check expects a scalar function")
    backward(out)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    worst = 0.0
    with no_grad():
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            aflat = analytic[pi].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                fp = float(f().data)
                flat[j] = orig - eps
                fm = float(f().data)
                flat[j] = orig
                numeric = (fp - fm) / (2.0 * eps)
                rel = abs(aflat[j] - numeric) / max(1e-8, abs(aflat[j]) + abs(numeric))
                worst = max(worst, rel)
    return worst
