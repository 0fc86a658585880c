"""Dense float32 tensors with reverse-mode automatic differentiation.

Every differentiable operation in the package is expressed through the
functions in this module.  Executed operations are recorded on a global
tape in execution order; ``backward`` replays the tape in exact reverse
order and accumulates gradients on every tensor that requires them.

Conventions:
  - float32 row-major buffers throughout (numpy ndarrays);
  - convolutions use cross-correlation semantics (no kernel flip);
  - ``reshape`` returns a view whenever the input is contiguous, while
    ``transpose`` materializes a contiguous copy so later views stay cheap.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError, UsageError

# Tape of (output tensor, backward fn) pairs in execution order.  Confined
# to the single training thread; forward-only evaluation under no_grad()
# never touches it.
_TAPE: list = []
_GRAD_ENABLED = True

# Production dtype is float32; gradient-check harnesses may temporarily
# switch to float64 so the finite-difference step can shrink below the
# reach of ReLU kinks.
_DTYPE = np.float32


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily change the dtype newly built tensors are cast to."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = dtype
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    """A dense float array (float32 in production) plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # Operator sugar; floats and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording; forward passes become pure evaluation."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def tape_size() -> int:
    return len(_TAPE)


def _track(*inputs: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in inputs)


def _record(out: Tensor, fn) -> None:
    out.requires_grad = True
    _TAPE.append((out, fn))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=_DTYPE)
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Run the backward pass from a scalar loss and clear the tape."""
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {tuple(loss.shape)}")
    if not _TAPE:
        raise UsageError("backward() called with an empty tape; no recorded operations")
    try:
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(_TAPE):
            if out.grad is not None:
                fn(out.grad)
    finally:
        _TAPE.clear()


def zero_grads(params) -> None:
    """Clear gradients on an iterable (or dict) of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    if _track(a, b):
        def bwd(g):
            _accum(a, g)
            _accum(b, g)
        _record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    if _track(a, b):
        def bwd(g):
            _accum(a, g)
            _accum(b, -g)
        _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    if _track(a, b):
        def bwd(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        _record(out, bwd)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    if _track(a, b):
        def bwd(g):
            _accum(a, g / b.data)
            _accum(b, -g * a.data / (b.data * b.data))
        _record(out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if _track(x):
        def bwd(g):
            _accum(x, g * (x.data > 0.0))
        _record(out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is overflow-free for any finite input
    out = Tensor(0.5 * (1.0 + np.tanh(0.5 * x.data)))
    if _track(x):
        def bwd(g):
            _accum(x, g * out.data * (1.0 - out.data))
        _record(out, bwd)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    if _track(x):
        def bwd(g):
            _accum(x, g / x.data)
        _record(out, bwd)
    return out


def sqrt(x: Tensor) -> Tensor:
    out = Tensor(np.sqrt(x.data))
    if _track(x):
        def bwd(g):
            _accum(x, g * 0.5 / out.data)
        _record(out, bwd)
    return out


def absolute(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))
    if _track(x):
        def bwd(g):
            _accum(x, g * np.sign(x.data))
        _record(out, bwd)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero outside the open interval."""
    out = Tensor(np.clip(x.data, lo, hi))
    if _track(x):
        def bwd(g):
            _accum(x, g * ((x.data > lo) & (x.data < hi)))
        _record(out, bwd)
    return out


def summation(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    if _track(x):
        def bwd(g):
            if axis is None:
                _accum(x, np.broadcast_to(g.reshape(()), x.data.shape))
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(x, np.broadcast_to(g, x.data.shape))
        _record(out, bwd)
    return out


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else _axis_count(x.data.shape, axis)
    return mul(summation(x, axis=axis, keepdims=keepdims), _as_tensor(1.0 / count))


def _axis_count(shape, axis) -> int:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = 1
    for a in axes:
        n *= shape[a]
    return n


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; gradient flows to the first max position."""
    out_data = x.data.max(axis=axis, keepdims=keepdims)
    out = Tensor(out_data)
    if _track(x):
        idx = np.argmax(x.data, axis=axis)
        def bwd(g):
            gx = np.zeros_like(x.data)
            if not keepdims:
                g = np.expand_dims(g, axis)
            np.put_along_axis(gx, np.expand_dims(idx, axis), g, axis=axis)
            _accum(x, gx)
        _record(out, bwd)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; rows sum to one."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {tuple(x.shape)}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if _track(x):
        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(x, (g - dot) * y)
        _record(out, bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm affine shapes {tuple(gain.shape)}/{tuple(bias.shape)} "
            f"do not match feature width {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    if _track(x, gain, bias):
        def bwd(g):
            c = x.shape[-1]
            gxhat = g * gain.data
            gx = inv * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, gx)
            axes = tuple(range(g.ndim - 1))
            _accum(gain, (g * xhat).sum(axis=axes))
            _accum(bias, g.sum(axis=axes))
        _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if -1 not in shape and math.prod(shape) != x.data.size:
        raise ShapeError(f"cannot reshape {tuple(x.shape)} ({x.data.size} elements) to {shape}")
    out = Tensor.__new__(Tensor)
    out.data = x.data.reshape(shape)  # view when contiguous
    out.requires_grad = False
    out.grad = None
    if _track(x):
        def bwd(g):
            _accum(x, g.reshape(x.data.shape))
        _record(out, bwd)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    if _track(x):
        inv = np.argsort(axes)
        def bwd(g):
            _accum(x, g.transpose(inv))
        _record(out, bwd)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _track(*tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
                _accum(t, piece)
        _record(out, bwd)
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"narrow range [{start}, {start + length}) exceeds axis {axis} "
            f"of shape {tuple(x.shape)}"
        )
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(x.data[sl]))
    if _track(x):
        def bwd(g):
            gx = np.zeros_like(x.data)
            gx[sl] = g
            _accum(x, gx)
        _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# matmul and convolutions
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting over leading dimensions."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {tuple(a.shape)} vs {tuple(b.shape)}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {tuple(a.shape)} vs {tuple(b.shape)}") from exc
    out = Tensor(out_data)
    if _track(a, b):
        def bwd(g):
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
            _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))
        _record(out, bwd)
    return out


def _corr1d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 cross-correlation, x:[B,Cin,T], w:[Cout,Cin,k]."""
    b, cin, t = x.shape
    cout, _, k = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)            # [B, Cin, T, k]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * t, cin * k)
    out = cols @ w.reshape(cout, cin * k).T             # [B*T, Cout]
    return np.ascontiguousarray(out.reshape(b, t, cout).transpose(0, 2, 1))


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1D convolution (cross-correlation), stride 1.

    x: [B, Cin, T], w: [Cout, Cin, k] with odd k; output [B, Cout, T].
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x[B,Cin,T] and w[Cout,Cin,k], got {tuple(x.shape)} and {tuple(w.shape)}")
    if w.shape[2] % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd for same-padding, got {w.shape[2]}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    out_data = _corr1d(x.data, w.data)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None]
    out = Tensor(out_data)
    inputs = (x, w) if bias is None else (x, w, bias)
    if _track(*inputs):
        def bwd(g):
            b_, cin, t = x.shape
            cout, _, k = w.shape
            if w.requires_grad:
                pad = k // 2
                xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
                win = sliding_window_view(xp, k, axis=2)
                cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b_ * t, cin * k)
                gcols = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b_ * t, cout)
                _accum(w, (cols.T @ gcols).T.reshape(cout, cin, k))
            if x.requires_grad:
                # input grad = correlation with the flipped, channel-swapped kernel
                wf = np.ascontiguousarray(w.data[:, :, ::-1].transpose(1, 0, 2))
                _accum(x, _corr1d(g, wf))
            if bias is not None:
                _accum(bias, g.sum(axis=(0, 2)))
        _record(out, bwd)
    return out


def _im2col2d(x: np.ndarray, k: int) -> np.ndarray:
    """x:[B,Cin,H,W] -> [B*H*W, Cin*k*k] patches under same-padding."""
    b, cin, h, w_ = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))   # [B, Cin, H, W, k, k]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w_, cin * k * k)


def _corr2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 2D cross-correlation; chunks over the batch to
    bound im2col scratch memory."""
    b, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    wm = w.reshape(cout, cin * k * k).T
    out = np.empty((b, cout, h, wd), dtype=_DTYPE)
    chunk = max(1, 8_000_000 // max(1, h * wd * cin * k * k))
    for s in range(0, b, chunk):
        e = min(b, s + chunk)
        cols = _im2col2d(x[s:e], k)                      # [(e-s)*H*W, Cin*k*k]
        res = cols @ wm                                  # [(e-s)*H*W, Cout]
        out[s:e] = res.reshape(e - s, h, wd, cout).transpose(0, 3, 1, 2)
    return out


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 2D convolution (cross-correlation), stride 1.

    x: [B, Cin, H, W], w: [Cout, Cin, k, k] with odd k; output [B, Cout, H, W].
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x[B,Cin,H,W] and w[Cout,Cin,k,k], got {tuple(x.shape)} and {tuple(w.shape)}")
    if w.shape[2] != w.shape[3]:
        raise ConfigError(f"conv2d kernel must be square, got {tuple(w.shape[2:])}")
    if w.shape[2] % 2 == 0:
        raise ConfigError(f"conv2d kernel size must be odd for same-padding, got {w.shape[2]}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    out_data = _corr2d(x.data, w.data)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    out = Tensor(out_data)
    inputs = (x, w) if bias is None else (x, w, bias)
    if _track(*inputs):
        def bwd(g):
            b, cin, h, wd = x.shape
            cout, _, k, _ = w.shape
            if w.requires_grad:
                gw = np.zeros((cin * k * k, cout), dtype=_DTYPE)
                chunk = max(1, 8_000_000 // max(1, h * wd * cin * k * k))
                for s in range(0, b, chunk):
                    e = min(b, s + chunk)
                    cols = _im2col2d(x.data[s:e], k)
                    gcols = np.ascontiguousarray(g[s:e].transpose(0, 2, 3, 1)).reshape(-1, cout)
                    gw += cols.T @ gcols
                _accum(w, gw.T.reshape(cout, cin, k, k))
            if x.requires_grad:
                wf = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                _accum(x, _corr2d(g, wf))
            if bias is not None:
                _accum(bias, g.sum(axis=(0, 2, 3)))
        _record(out, bwd)
    return out


def _im2col2d_cl(x: np.ndarray, k: int) -> np.ndarray:
    """Channels-last patches: x [B,H,W,Cin] -> [B*H*W, k*k*Cin].

    The innermost copied axis is the contiguous channel axis, which keeps
    the gather cache-friendly (the channels-first variant copies in
    3-float runs and dominates conv runtime).
    """
    b, h, w_, cin = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))   # [B, H, W, Cin, k, k]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * h * w_, k * k * cin)


def _corr2d_cl(x: np.ndarray, wm: np.ndarray, k: int, cout: int) -> np.ndarray:
    """Channels-last same-padded correlation against a prepared
    [k*k*Cin, Cout] weight matrix; chunks over the batch to bound scratch."""
    b, h, w_, cin = x.shape
    out = np.empty((b, h, w_, cout), dtype=_DTYPE)
    chunk = max(1, 8_000_000 // max(1, h * w_ * cin * k * k))
    for s in range(0, b, chunk):
        e = min(b, s + chunk)
        cols = _im2col2d_cl(x[s:e], k)
        out[s:e] = (cols @ wm).reshape(e - s, h, w_, cout)
    return out


def _weight_matrix_cl(w: np.ndarray) -> np.ndarray:
    """[Cout, Cin, k, k] -> [k*k*Cin, Cout] matching the cl patch layout."""
    cout, cin, k, _ = w.shape
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(k * k * cin, cout)


def conv2d_cl(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Channels-last twin of conv2d: x [B, H, W, Cin] -> [B, H, W, Cout].

    Weights keep the [Cout, Cin, k, k] layout so checkpoints are
    interchangeable with conv2d; results agree within float rounding.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d_cl expects x[B,H,W,Cin] and w[Cout,Cin,k,k], got {tuple(x.shape)} and {tuple(w.shape)}")
    if w.shape[2] != w.shape[3]:
        raise ConfigError(f"conv2d_cl kernel must be square, got {tuple(w.shape[2:])}")
    if w.shape[2] % 2 == 0:
        raise ConfigError(f"conv2d_cl kernel size must be odd for same-padding, got {w.shape[2]}")
    if x.shape[3] != w.shape[1]:
        raise ShapeError(f"conv2d_cl channel mismatch: input has {x.shape[3]}, kernel expects {w.shape[1]}")
    cout, cin, k, _ = w.shape
    out_data = _corr2d_cl(x.data, _weight_matrix_cl(w.data), k, cout)
    if bias is not None:
        out_data = out_data + bias.data
    out = Tensor(out_data)
    inputs = (x, w) if bias is None else (x, w, bias)
    if _track(*inputs):
        def bwd(g):
            b, h, w_, _ = x.shape
            if w.requires_grad:
                gw = np.zeros((k * k * cin, cout), dtype=_DTYPE)
                chunk = max(1, 8_000_000 // max(1, h * w_ * cin * k * k))
                for s in range(0, b, chunk):
                    e = min(b, s + chunk)
                    cols = _im2col2d_cl(x.data[s:e], k)
                    gw += cols.T @ g[s:e].reshape(-1, cout)
                _accum(w, gw.reshape(k, k, cin, cout).transpose(3, 2, 0, 1))
            if x.requires_grad:
                flipped = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # [Cin, Cout, k, k]
                _accum(x, _corr2d_cl(g, _weight_matrix_cl(flipped), k, cin))
            if bias is not None:
                _accum(bias, g.sum(axis=(0, 1, 2)))
        _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-uniform draw for conv/linear weights."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
