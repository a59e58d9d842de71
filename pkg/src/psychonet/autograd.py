"""Reverse-mode automatic differentiation over real and complex numpy arrays.

A :class:`Tensor` wraps a real ``numpy.ndarray``. A :class:`ComplexTensor`
is a pair of real tensors ``(re, im)``; every complex operation is composed
from real operations, so gradients of complex values are simply the pair of
real gradients (the optimizer sees ``re`` and ``im`` as independent reals).

Each differentiable operation builds a node holding its parents and a closure
mapping the output gradient to one gradient per parent. :func:`backward`
sweeps the graph in reverse topological order, accumulating gradients
additively where a value fans out.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Tensor",
    "Parameter",
    "ComplexTensor",
    "ComplexParameter",
    "get_default_dtype",
    "set_default_dtype",
    "precision",
    "no_grad",
    "debug_mode",
    "backward",
    "grad",
    "gradcheck",
]

_DTYPE = np.float32
_GRAD_ENABLED = True
_DEBUG = False


def get_default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type (``float64`` = verification mode)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Assert that every forward output is finite while active."""
    global _DEBUG
    old = _DEBUG
    _DEBUG = enabled
    try:
        yield
    finally:
        _DEBUG = old


class Tensor:
    """A real n-dimensional array participating in the autograd graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        target = dtype or _DTYPE
        if arr.dtype != target:
            arr = arr.astype(target)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # -- construction helpers -------------------------------------------
    @staticmethod
    def _wrap(data: np.ndarray) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self, grad_output=None) -> None:
        backward(self, grad_output)


class Parameter(Tensor):
    """A leaf tensor that requires gradients; its name is the checkpoint key."""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


def _node(data: np.ndarray, parents: Sequence, backward_fn: Callable) -> Tensor:
    """Create an output tensor; record parents only when a gradient is needed."""
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by forward op")
    out = Tensor._wrap(data)
    if _GRAD_ENABLED and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_DTYPE))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _node(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _node(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def safe_pow(a: Tensor, p: float) -> Tensor:
    """``a**p`` for ``a > 0`` and 0 elsewhere; the gradient is 0 where ``a <= 0``."""
    ad = a.data
    pos = ad > 0
    safe = np.where(pos, ad, 1)
    out = np.where(pos, safe ** p, 0).astype(ad.dtype)
    return _node(out, (a,), lambda g: (np.where(pos, g * p * safe ** (p - 1), 0).astype(ad.dtype),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF from ``scipy.special.ndtr``."""
    x = a.data
    cdf = ndtr(x)
    out = x * cdf

    def bw(g):
        # d/dx [x Phi(x)] = Phi(x) + x phi(x)
        pdf = x * x
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= x
        pdf *= 1 / math.sqrt(2.0 * math.pi)
        pdf += cdf
        pdf *= g
        return (pdf,)

    return _node(out, (a,), bw)


def where_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 mask (zero entries pass no gradient)."""
    m = np.asarray(mask, dtype=a.dtype)
    return _node(a.data * m, (a,), lambda g: (_unbroadcast(g * m, a.shape),))


def mask_grad(a: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Identity in the forward pass; multiplies the incoming gradient by ``mask``."""
    if mask is None:
        return a
    m = np.asarray(mask, dtype=a.dtype)
    return _node(a.data, (a,), lambda g: (g * m,))


def magnitude(re: Tensor, im: Tensor) -> Tensor:
    """``sqrt(re^2 + im^2)``; gradient defined as zero at the origin."""
    r = np.sqrt(re.data * re.data + im.data * im.data)
    nz = r > 0
    inv = np.where(nz, 1.0 / np.where(nz, r, 1), 0).astype(r.dtype)

    def bw(g):
        gi = g * inv
        return (gi * re.data, gi * im.data)

    return _node(r, (re, im), bw)


def phase(re: Tensor, im: Tensor) -> Tensor:
    a, b = re.data, im.data
    r2 = a * a + b * b
    nz = r2 > 0
    inv = np.where(nz, 1.0 / np.where(nz, r2, 1), 0).astype(a.dtype)

    def bw(g):
        return (-g * b * inv, g * a * inv)

    return _node(np.arctan2(b, a), (re, im), bw)


# ---------------------------------------------------------------------------
# shape and reduction
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g) if _is_advanced(idx) else _assign_add(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), bw)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _assign_add(full, idx, g):
    full[idx] += g


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def pad2d(a: Tensor, p: int) -> Tensor:
    if p == 0:
        return a
    out = np.pad(a.data, ((0, 0), (0, 0), (p, p), (p, p)))
    return _node(out, (a,), lambda g: (g[:, :, p:-p, p:-p],))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        if gb is not None:
            gb = _unbroadcast(gb, bd.shape)
        return ga, gb

    return _node(ad @ bd, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (d_out, d_in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} does not match weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return out + bias if bias is not None else out


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _conv_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2D cross-correlation, NCHW input and (O, C/groups, K, K) kernel, zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if c % groups or o % groups:
        raise ValueError(f"conv2d: channels {c}->{o} not divisible by groups={groups}")
    if cg * groups != c:
        raise ValueError(f"conv2d: kernel {weight.shape} expects {cg * groups} input channels, got {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    if groups == 1 and kh == 1 and kw == 1 and padding == 0:
        out = _conv1x1(x, weight, stride)
    elif groups == 1:
        out = _conv_im2col(x, weight, stride, padding)
    elif groups == c and o == c and cg == 1:
        out = _conv_depthwise(x, weight, stride, padding)
    else:
        step_i, step_o = c // groups, o // groups
        outs = [
            conv2d(x[:, g * step_i:(g + 1) * step_i], weight[g * step_o:(g + 1) * step_o],
                   None, stride, padding, 1)
            for g in range(groups)
        ]
        out = concat(outs, axis=1)
    if bias is not None:
        out = out + reshape(bias, (1, o, 1, 1))
    return out


def _conv1x1(x: Tensor, weight: Tensor, stride: int) -> Tensor:
    xd = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
    w2 = weight.data[:, :, 0, 0]
    out = np.ascontiguousarray(np.tensordot(w2, xd, axes=([1], [1])).transpose(1, 0, 2, 3))
    full_shape = x.shape

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gs = np.tensordot(w2, g, axes=([0], [1])).transpose(1, 0, 2, 3)
            if stride > 1:
                gx = np.zeros(full_shape, dtype=g.dtype)
                gx[:, :, ::stride, ::stride] = gs
            else:
                gx = np.ascontiguousarray(gs)
        if weight.requires_grad:
            gw = np.tensordot(g, xd, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        return gx, gw

    return _node(out, (x, weight), bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw), ho, wo


def _conv_im2col(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        # contiguous so both products stay on the BLAS path whatever layout g arrives in
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            # col2im accumulated channels-last, then back to NCHW
            gxp = np.zeros((n, xp.shape[2], xp.shape[3], c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, :, i, j]
            gxp = gxp[:, padding:padding + h, padding:padding + w, :] if padding else gxp
            gx = np.ascontiguousarray(gxp.transpose(0, 3, 1, 2))
        return gx, gw

    return _node(out, (x, weight), bw)


def _conv_depthwise(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    n, c, h, w = x.shape
    _, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    wd = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] * wd[None, :, i, j, None, None]

    def bw(g):
        gx = gw = None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", patch, g)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * wd[None, :, i, j, None, None]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw

    return _node(out, (x, weight), bw)


def avgpool2d_global(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: (N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))


def maxpool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        di, dj = np.divmod(arg, kernel)
        rows = di + stride * np.arange(ho)[None, None, :, None]
        cols = dj + stride * np.arange(wo)[None, None, None, :]
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(gxp, (nn_, cc, rows, cols), g)
        return (gxp[:, :, padding:padding + h, padding:padding + w],)

    return _node(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# normalization, softmax, losses
# ---------------------------------------------------------------------------

def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W); running stats updated in place in training."""
    n, c, h, w = x.shape
    xd = x.data
    if training:
        if n < 2:
            raise ValueError("batchnorm2d: batch of size 1 is not allowed in train mode")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        m = n * h * w
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    gd, bd = gamma.data, beta.data
    out = xhat * gd[None, :, None, None] + bd[None, :, None, None]

    def bw(g):
        ggamma = np.einsum("nchw,nchw->c", g, xhat) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd[None, :, None, None]
            if training:
                mg = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mgx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = (gxhat - mg - xhat * mgx) * inv[None, :, None, None]
            else:
                gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax: axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    lp = log_softmax(logits, axis=1)
    n = labels.shape[0]
    picked = getitem(lp, (np.arange(n), labels))
    return neg(mean(picked))


# ---------------------------------------------------------------------------
# complex values
# ---------------------------------------------------------------------------

class ComplexTensor:
    """A complex array stored as two real tensors of identical shape."""

    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        re = re if isinstance(re, Tensor) else Tensor(re)
        if im is None:
            im = Tensor._wrap(np.zeros_like(re.data))
        im = im if isinstance(im, Tensor) else Tensor(im)
        if re.shape != im.shape:
            raise ValueError(f"ComplexTensor: re shape {re.shape} != im shape {im.shape}")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, z: np.ndarray, requires_grad: bool = False) -> "ComplexTensor":
        z = np.asarray(z)
        return cls(Tensor(z.real.copy(), requires_grad=requires_grad),
                   Tensor(np.imag(z).copy(), requires_grad=requires_grad))

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @property
    def shape(self) -> tuple:
        return self.re.shape

    @property
    def ndim(self) -> int:
        return self.re.ndim

    @property
    def dtype(self):
        return self.re.dtype

    @property
    def requires_grad(self) -> bool:
        return self.re.requires_grad or self.im.requires_grad

    def detach(self) -> "ComplexTensor":
        return ComplexTensor(self.re.detach(), self.im.detach())

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        if isinstance(other, ComplexTensor):
            return ComplexTensor(add(self.re, other.re), add(self.im, other.im))
        if isinstance(other, complex):
            return ComplexTensor(add(self.re, other.real), add(self.im, other.imag))
        return ComplexTensor(add(self.re, other), self.im)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if not isinstance(other, ComplexTensor) else other.neg())

    def neg(self) -> "ComplexTensor":
        return ComplexTensor(neg(self.re), neg(self.im))

    __neg__ = neg

    def __mul__(self, other):
        if isinstance(other, ComplexTensor):
            return complex_mul(self, other)
        if isinstance(other, complex):
            a, b = other.real, other.imag
            return ComplexTensor(sub(mul(self.re, a), mul(self.im, b)), add(mul(self.re, b), mul(self.im, a)))
        return ComplexTensor(mul(self.re, other), mul(self.im, other))

    __rmul__ = __mul__

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re, neg(self.im))

    def magnitude(self) -> Tensor:
        return magnitude(self.re, self.im)

    abs = magnitude

    def phase(self) -> Tensor:
        return phase(self.re, self.im)

    def __getitem__(self, idx) -> "ComplexTensor":
        return ComplexTensor(getitem(self.re, idx), getitem(self.im, idx))

    def reshape(self, *shape) -> "ComplexTensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ComplexTensor(reshape(self.re, shape), reshape(self.im, shape))

    def sum(self, axis=None, keepdims=False) -> "ComplexTensor":
        return ComplexTensor(tsum(self.re, axis, keepdims), tsum(self.im, axis, keepdims))

    def mean(self, axis=None, keepdims=False) -> "ComplexTensor":
        return ComplexTensor(mean(self.re, axis, keepdims), mean(self.im, axis, keepdims))


class ComplexParameter(ComplexTensor):
    """A complex learnable value; registered as two real parameters ``<name>.re`` / ``<name>.im``."""

    __slots__ = ()

    def __init__(self, re, im):
        super().__init__(Parameter(re), Parameter(im))


def complex_mul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """(a+ib)(c+id) = (ac - bd) + i(ad + bc)."""
    if a.shape != b.shape:
        _check_broadcast(a.re.data, b.re.data, "complex_mul")
    re = sub(mul(a.re, b.re), mul(a.im, b.im))
    im = add(mul(a.re, b.im), mul(a.im, b.re))
    return ComplexTensor(re, im)


def complex_concat(values: Sequence[ComplexTensor], axis: int = 1) -> ComplexTensor:
    return ComplexTensor(concat([v.re for v in values], axis), concat([v.im for v in values], axis))


def as_complex(x) -> ComplexTensor:
    if isinstance(x, ComplexTensor):
        return x
    return ComplexTensor(x, Tensor._wrap(np.zeros_like(_lift(x).data)))


# ---------------------------------------------------------------------------
# the backward sweep
# ---------------------------------------------------------------------------

def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _sweep(root: Tensor, grad_output: np.ndarray, keep: Iterable[Tensor] = ()) -> dict:
    grads = {id(root): grad_output}
    keep_ids = {id(k) for k in keep}
    kept = {}
    for node in reversed(_topo(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in keep_ids:
            kept[id(node)] = g
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not (isinstance(p, Tensor) and p.requires_grad):
                continue
            pg = np.asarray(pg, dtype=p.data.dtype)
            if pg.shape != p.shape:
                pg = np.broadcast_to(pg, p.shape)
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    return kept


def backward(loss: Tensor, grad_output=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if grad_output is None:
        if loss.size != 1:
            raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise FloatingPointError("backward: loss is not finite")
        grad_output = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    _sweep(loss, np.asarray(grad_output, dtype=loss.dtype))


def grad(output: Tensor, inputs: Sequence[Tensor]) -> list:
    """Gradients of scalar ``output`` w.r.t. arbitrary (possibly non-leaf) graph nodes."""
    if output.size != 1:
        raise ValueError(f"grad: output must be a scalar, got shape {output.shape}")
    results = [np.zeros_like(t.data) for t in inputs]
    if not output.requires_grad:
        return results
    backups = [(t, t.grad) for t in inputs if t._backward is None]
    kept = _sweep(output, np.ones_like(output.data), keep=inputs)
    for i, t in enumerate(inputs):
        if id(t) in kept:
            results[i] = np.asarray(kept[id(t)]).copy()
    for t, g in backups:
        t.grad = g
    return results


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def _leaves(x) -> list:
    if isinstance(x, ComplexTensor):
        return [x.re, x.im]
    if isinstance(x, Tensor):
        return [x]
    out = []
    for item in x:
        out.extend(_leaves(item))
    return out


def gradcheck(f: Callable[[], Tensor], inputs, eps: float = 1e-4, max_coords: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` takes no arguments and closes over ``inputs`` (tensors, complex tensors
    or a list of them); complex inputs are checked on ``re`` and ``im``
    independently. ``max_coords`` samples that many coordinates per leaf.
    """
    leaves = _leaves(inputs)
    for t in leaves:
        t.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("gradcheck: f must return a scalar")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("gradcheck: f is not finite")
    backward(out)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in leaves:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise FloatingPointError("gradcheck: f is not finite near the input")
                num = (fp - fm) / (2 * eps)
                a = float(analytic.reshape(-1)[i])
                rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, rel)
        t.grad = None
    return worst
