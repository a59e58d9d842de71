"""Complex-valued layers built from real primitives.

A complex kernel ``W = W_R + i W_I`` acting on ``h = a + ib`` gives
``(W_R*a - W_I*b) + i(W_I*a + W_R*b)``. Batch normalization whitens the
(re, im) pair of every channel with the inverse square root of its 2x2
covariance before a learnable symmetric 2x2 affine map.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import ComplexParameter, ComplexTensor, Parameter, Tensor
from .nn import Module, default_rng, kaiming_normal


def complex_conv2d(h: ComplexTensor, w_re: Tensor, w_im: Tensor, bias: Optional[ComplexTensor] = None,
                   stride: int = 1, padding: int = 0) -> ComplexTensor:
    """Complex cross-correlation as four real convolutions.

    The four products are evaluated in one real convolution with the block
    kernel ``[[W_R, -W_I], [W_I, W_R]]`` over the stacked channels ``[a; b]``.
    """
    if w_re.shape != w_im.shape:
        raise ValueError(f"complex_conv2d: kernel parts differ, {w_re.shape} vs {w_im.shape}")
    if h.ndim != 4 or h.shape[1] != w_re.shape[1]:
        raise ValueError(f"complex_conv2d: input {h.shape} does not match kernel {w_re.shape}")
    o = w_re.shape[0]
    x = ag.concat([h.re, h.im], axis=1)
    top = ag.concat([w_re, ag.neg(w_im)], axis=1)
    bottom = ag.concat([w_im, w_re], axis=1)
    out = ag.conv2d(x, ag.concat([top, bottom], axis=0), None, stride, padding)
    re, im = out[:, :o], out[:, o:]
    if bias is not None:
        re = re + ag.reshape(bias.re, (1, o, 1, 1))
        im = im + ag.reshape(bias.im, (1, o, 1, 1))
    return ComplexTensor(re, im)


def _inv_sqrt_2x2(vrr, vri, vii):
    """Closed-form ``V^{-1/2}`` and ``V^{1/2}`` for symmetric positive 2x2 matrices."""
    s = np.sqrt(vrr * vii - vri * vri)
    t = np.sqrt(vrr + vii + 2 * s)
    inv = 1.0 / (s * t)
    w = ((vii + s) * inv, -vri * inv, (vrr + s) * inv)
    root = ((vrr + s) / t, vri / t, (vii + s) / t)
    return w, root


def _sym(a, b, c):
    """Stack per-channel symmetric 2x2 entries into (C, 2, 2) matrices."""
    return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)


def complex_batchnorm2d(h: ComplexTensor, gamma_rr: Optional[Tensor], gamma_ri: Optional[Tensor],
                        gamma_ii: Optional[Tensor], beta: Optional[ComplexTensor],
                        running_mean: np.ndarray, running_cov: np.ndarray, training: bool,
                        momentum: float = 0.1, eps: float = 1e-5) -> ComplexTensor:
    """Whitening batch norm for complex NCHW maps.

    ``running_mean`` has shape (2, C) and ``running_cov`` (3, C) holding
    ``(Vrr, Vri, Vii)``; both are updated in place in training mode. Passing
    ``None`` for the affine arguments returns the whitened values.
    """
    if h.ndim != 4:
        raise ValueError(f"complex_batchnorm2d expects NCHW input, got {h.shape}")
    n, c, hh, ww = h.shape
    m = n * hh * ww
    dtype = h.dtype
    a, b = h.re.data, h.im.data
    axes = (0, 2, 3)

    def bc(v):
        return np.asarray(v, dtype=dtype)[None, :, None, None]

    if training:
        if m < 2:
            raise ValueError("complex_batchnorm2d: train mode needs at least 2 samples per channel")
        mr, mi = a.mean(axis=axes), b.mean(axis=axes)
        cr, ci = a - bc(mr), b - bc(mi)
        crr, cri, cii = (cr * cr).mean(axis=axes), (cr * ci).mean(axis=axes), (ci * ci).mean(axis=axes)
        unbias = m / (m - 1)
        running_mean *= 1 - momentum
        running_mean += momentum * np.stack([mr, mi])
        running_cov *= 1 - momentum
        running_cov += momentum * unbias * np.stack([crr, cri, cii])
    else:
        mr, mi = running_mean[0].astype(dtype), running_mean[1].astype(dtype)
        cr, ci = a - bc(mr), b - bc(mi)
        crr, cri, cii = (running_cov[i].astype(dtype) for i in range(3))
    vrr, vri, vii = crr + eps, cri, cii + eps
    (wrr, wri, wii), (srr, sri, sii) = _inv_sqrt_2x2(vrr, vri, vii)
    xr = bc(wrr) * cr + bc(wri) * ci
    xi = bc(wri) * cr + bc(wii) * ci

    affine = gamma_rr is not None
    if affine:
        grr, gri, gii = gamma_rr.data, gamma_ri.data, gamma_ii.data
        yr = bc(grr) * xr + bc(gri) * xi + bc(beta.re.data)
        yi = bc(gri) * xr + bc(gii) * xi + bc(beta.im.data)
        parents = (h.re, h.im, gamma_rr, gamma_ri, gamma_ii, beta.re, beta.im)
    else:
        yr, yi = xr, xi
        parents = (h.re, h.im)
    packed = np.stack([yr, yi])

    def bw(g):
        gyr, gyi = g[0], g[1]
        if affine:
            gxr = bc(grr) * gyr + bc(gri) * gyi
            gxi = bc(gri) * gyr + bc(gii) * gyi
            param_grads = [
                (gyr * xr).sum(axis=axes),
                (gyr * xi + gyi * xr).sum(axis=axes),
                (gyi * xi).sum(axis=axes),
                gyr.sum(axis=axes),
                gyi.sum(axis=axes),
            ]
        else:
            gxr, gxi = gyr, gyi
            param_grads = []
        gcr = bc(wrr) * gxr + bc(wri) * gxi
        gci = bc(wri) * gxr + bc(wii) * gxi
        if training:
            # dL/dW, then W = S^{-1}: dL/dS = -W dL/dW W
            g_w = np.stack([
                np.stack([(gxr * cr).sum(axis=axes), (gxr * ci).sum(axis=axes)], -1),
                np.stack([(gxi * cr).sum(axis=axes), (gxi * ci).sum(axis=axes)], -1),
            ], -2)
            wmat = _sym(wrr, wri, wii)
            g_s = -wmat @ g_w @ wmat
            # S^2 = V: dL/dV solves the Sylvester equation S X + X S = dL/dS
            smat = _sym(srr, sri, sii)
            eye = np.eye(2, dtype=dtype)
            kron = np.einsum("cij,kl->cikjl", smat, eye) + np.einsum("ij,ckl->cikjl", eye, smat)
            g_v = np.linalg.solve(kron.reshape(c, 4, 4), g_s.reshape(c, 4, 1)).reshape(c, 2, 2)
            g_v = (g_v + np.swapaxes(g_v, -1, -2)) / m
            gcr = gcr + bc(g_v[:, 0, 0]) * cr + bc(g_v[:, 0, 1]) * ci
            gci = gci + bc(g_v[:, 1, 0]) * cr + bc(g_v[:, 1, 1]) * ci
            gcr = gcr - gcr.mean(axis=axes, keepdims=True)
            gci = gci - gci.mean(axis=axes, keepdims=True)
        return [gcr, gci] + param_grads

    node = ag._node(packed, parents, bw)
    return ComplexTensor(node[0], node[1])


def complex_gelu(h: ComplexTensor) -> ComplexTensor:
    """GELU applied to the real and imaginary parts separately."""
    return ComplexTensor(ag.gelu(h.re), ag.gelu(h.im))


def complex_avgpool_global(h: ComplexTensor) -> ComplexTensor:
    """Mean over the spatial axes: (N, C, H, W) to (N, C)."""
    return ComplexTensor(ag.mean(h.re, axis=(2, 3)), ag.mean(h.im, axis=(2, 3)))


def complex_linear(h: ComplexTensor, weight: ComplexTensor, bias: Optional[ComplexTensor] = None) -> ComplexTensor:
    """``W h + b`` for (N, d_in) input and (d_out, d_in) complex weight, via four real matmuls."""
    if h.ndim != 2 or h.shape[1] != weight.shape[1]:
        raise ValueError(f"complex_linear: input {h.shape} does not match weight {weight.shape}")
    wr_t = ag.transpose(weight.re)
    wi_t = ag.transpose(weight.im)
    re = ag.matmul(h.re, wr_t) - ag.matmul(h.im, wi_t)
    im = ag.matmul(h.re, wi_t) + ag.matmul(h.im, wr_t)
    if bias is not None:
        re = re + bias.re
        im = im + bias.im
    return ComplexTensor(re, im)


class ComplexConv2d(Module):
    layer_kind = "complex"

    def __init__(self, d_in: int, d_out: int, kernel: int = 1, stride: int = 1, padding: Optional[int] = None,
                 bias: bool = False, rng=None):
        super().__init__()
        rng = default_rng(rng)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = d_in * kernel * kernel
        shape = (d_out, d_in, kernel, kernel)
        scale = 1 / math.sqrt(2)
        self.weight = ComplexParameter(kaiming_normal(rng, shape, fan_in, scale),
                                       kaiming_normal(rng, shape, fan_in, scale))
        self.bias = ComplexParameter(np.zeros(d_out), np.zeros(d_out)) if bias else None

    def forward(self, h: ComplexTensor) -> ComplexTensor:
        return complex_conv2d(h, self.weight.re, self.weight.im, self.bias, self.stride, self.padding)


class ComplexBatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_cov")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        half = np.full(channels, 1 / math.sqrt(2))
        self.gamma_rr = Parameter(half)
        self.gamma_ri = Parameter(np.zeros(channels))
        self.gamma_ii = Parameter(half.copy())
        self.beta = ComplexParameter(np.zeros(channels), np.zeros(channels))
        dtype = ag.get_default_dtype()
        self.running_mean = np.zeros((2, channels), dtype=dtype)
        self.running_cov = np.stack([np.ones(channels), np.zeros(channels), np.ones(channels)]).astype(dtype)

    def forward(self, h: ComplexTensor) -> ComplexTensor:
        return complex_batchnorm2d(h, self.gamma_rr, self.gamma_ri, self.gamma_ii, self.beta,
                                   self.running_mean, self.running_cov, self.training, self.momentum, self.eps)


class ComplexLinear(Module):
    layer_kind = "complex"

    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None):
        super().__init__()
        rng = default_rng(rng)
        bound = 1.0 / math.sqrt(2 * d_in)
        self.weight = ComplexParameter(rng.uniform(-bound, bound, (d_out, d_in)),
                                       rng.uniform(-bound, bound, (d_out, d_in)))
        self.bias = ComplexParameter(np.zeros(d_out), np.zeros(d_out)) if bias else None

    def forward(self, h: ComplexTensor) -> ComplexTensor:
        return complex_linear(h, self.weight, self.bias)
