"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap numpy arrays. Ops executed while a Tape is active (and touching
at least one gradient-requiring tensor) record themselves on that tape in
creation order, which is already a topological order; Tape.backward walks the
records once, in reverse. Without an active tape every op is a plain numpy
computation, so inference pays nothing for the machinery.

float32 is the runtime dtype; gradient checks build float64 tensors and all
ops preserve the incoming dtype.
"""

import threading

import numpy as np
from scipy.special import expit as _expit

from .errors import ShapeError

_STATE = threading.local()


def _stack():
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = []
        _STATE.tapes = stack
    return stack


def current_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Op records for one forward pass, in creation (topological) order."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def backward(self, loss, wrt):
        """Reverse-mode gradients of scalar `loss` w.r.t. tensors `wrt`.

        Returns one array per entry of `wrt` (zeros where unreachable) and
        clears every gradient it touched, so tapes are single-use but the
        parameter tensors stay clean for the next step.
        """
        if loss.data.size != 1:
            raise ShapeError("backward root must be a scalar")
        wrt = list(wrt)
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward(node.grad)
        grads = []
        for t in wrt:
            grads.append(
                np.zeros_like(t.data) if t.grad is None else t.grad
            )
        for node in self.nodes:
            node.grad = None
        loss.grad = None
        for t in wrt:
            t.grad = None
        return grads


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __neg__(self):
        return mul(self, _coerce(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def parameter(data):
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data, dtype=None):
    return Tensor(np.asarray(data, dtype=dtype))


def _coerce(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _make(data, parents, backward_fn):
    """Create an op result; record it when taped and gradient-relevant."""
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._backward = backward_fn
        tape.nodes.append(out)
        return out
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum gradient g down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a, b):
    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def div(a, b):
    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bwd)


def pow_const(a, exponent):
    p = float(exponent)

    def bwd(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(a.data**p, (a,), bwd)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def exp(a):
    out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), bwd)


def log(a):
    def bwd(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def tanh(a):
    out_data = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


def sigmoid(a):
    out_data = _expit(a.data)

    def bwd(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]

    def bwd(g):
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape):
    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes):
    inverse = np.argsort(axes)

    def bwd(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), bwd)


def getitem(a, key):
    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[key] += g
        _accumulate(a, buf)

    return _make(a.data[key], (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd
    )


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """a @ b for 2-D x 2-D or 1-D x 2-D operands."""
    if a.data.ndim == 2 and b.data.ndim == 2:

        def bwd(g):
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

    elif a.data.ndim == 1 and b.data.ndim == 2:

        def bwd(g):
            _accumulate(a, b.data @ g)
            _accumulate(b, np.outer(a.data, g))

    else:
        raise ShapeError(
            f"matmul supports (m,n)@(n,k) or (n,)@(n,k); got "
            f"{a.data.shape} @ {b.data.shape}"
        )
    return _make(a.data @ b.data, (a, b), bwd)


# ---------------------------------------------------------------------------
# network building blocks
# ---------------------------------------------------------------------------


def mfm(x):
    """Max-feature-map: halve axis 0 by elementwise max of the two halves.

    Ties route the gradient to the first half.
    """
    n = x.data.shape[0]
    if n % 2 != 0:
        raise ShapeError(f"mfm needs an even leading extent, got {n}")
    half = n // 2
    first, second = x.data[:half], x.data[half:]
    mask = first >= second

    def bwd(g):
        buf = np.concatenate(
            [np.where(mask, g, 0.0), np.where(mask, 0.0, g)], axis=0
        )
        _accumulate(x, buf)

    return _make(np.where(mask, first, second), (x,), bwd)


def conv2d(x, w, b=None):
    """Cross-correlation with zero 'same' padding at stride 1.

    x: (C_in, H, W); w: (C_out, C_in, kh, kw) with odd kh, kw; b: (C_out,).
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError("conv2d expects x (C,H,W) and w (Cout,Cin,kh,kw)")
    c_in, h, wd = x.data.shape
    c_out, c_in2, kh, kw = w.data.shape
    if c_in != c_in2:
        raise ShapeError(f"conv2d channel mismatch: x has {c_in}, w has {c_in2}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h * wd, c_in * kh * kw)
    w_mat = w.data.reshape(c_out, -1)
    out = cols @ w_mat.T
    if b is not None:
        out = out + b.data
    out = out.T.reshape(c_out, h, wd)

    def bwd(g):
        g_mat = g.reshape(c_out, h * wd).T
        _accumulate(w, (g_mat.T @ cols).reshape(w.data.shape))
        if b is not None:
            _accumulate(b, g.sum(axis=(1, 2)))
        d_cols = (g_mat @ w_mat).reshape(h, wd, c_in, kh, kw).transpose(2, 3, 4, 0, 1)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + h, j : j + wd] += d_cols[:, i, j]
        _accumulate(x, dxp[:, ph : ph + h, pw : pw + wd])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def maxpool2x2(x):
    """2x2 max pooling at stride 2; incomplete trailing windows are dropped."""
    c, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"maxpool2x2 needs extents >= 2, got {x.data.shape}")
    blocks = (
        x.data[:, : 2 * h2, : 2 * w2]
        .reshape(c, h2, 2, w2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h2, w2, 4)
    )
    idx = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def bwd(g):
        d_blocks = np.zeros_like(blocks)
        np.put_along_axis(d_blocks, idx[..., None], g[..., None], axis=3)
        d_core = (
            d_blocks.reshape(c, h2, w2, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, 2 * h2, 2 * w2)
        )
        buf = np.zeros_like(x.data)
        buf[:, : 2 * h2, : 2 * w2] = d_core
        _accumulate(x, buf)

    return _make(out, (x,), bwd)


def global_avg_pool(x, valid_len):
    """Mean over the first valid_len rows of an (N, D) sequence."""
    n = x.data.shape[0]
    if not (1 <= valid_len <= n):
        raise ShapeError(f"valid_len {valid_len} out of range for N={n}")

    def bwd(g):
        buf = np.zeros_like(x.data)
        buf[:valid_len] = g / valid_len
        _accumulate(x, buf)

    return _make(x.data[:valid_len].mean(axis=0), (x,), bwd)
