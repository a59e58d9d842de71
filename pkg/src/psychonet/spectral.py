"""2D discrete Fourier machinery: FFT, centered spectra and companding.

Forward transform ``X(u,v) = sum_{x,y} I(x,y) e^{-2 pi i (ux + vy)/w}``; the
inverse carries the ``1/w^2`` factor. The FFT is a mixed-radix Cooley-Tukey
recursion over dense DFT-matrix leaves, falling back to Bluestein's chirp-z
algorithm for prime sizes above ``_MAX_DIRECT_RADIX``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autograd import ComplexTensor, Tensor, _node, safe_pow, where_mask, mul

COMPAND_EXPONENT = 1 / 1.25
_LEAF_SIZE = 64
_MAX_DIRECT_RADIX = 7


class Layout(enum.Enum):
    NATURAL = "natural"
    CENTERED = "centered"


@dataclass(frozen=True)
class Spectrum:
    """A complex frequency map (N, C, w, w) tagged with its layout."""

    data: ComplexTensor
    layout: Layout

    @property
    def size(self) -> int:
        return self.data.shape[-1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def center(self) -> int:
        return self.size // 2

    def numpy(self) -> np.ndarray:
        return self.data.numpy()


# ---------------------------------------------------------------------------
# 1D FFT kernels on complex numpy arrays (transform along the last axis)
# ---------------------------------------------------------------------------

def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _cdtype(x: np.ndarray):
    """complex64 for single-precision data, complex128 otherwise."""
    return np.complex64 if x.dtype in (np.float32, np.complex64) else np.complex128


@lru_cache(maxsize=None)
def _dft_matrix(n: int, dtype=np.complex128) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n).astype(dtype)


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int, dtype=np.complex128) -> np.ndarray:
    n = p * m
    return np.exp(-2j * np.pi * np.outer(np.arange(p), np.arange(m)) / n).astype(dtype)


def _pow2_at_least(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


@lru_cache(maxsize=None)
def _bluestein_plan(n: int, dtype=np.complex128):
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * (k * k % (2 * n)) / n)
    m = _pow2_at_least(2 * n - 1)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    return chirp.astype(dtype), m, _fft_last(b).astype(dtype)


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    chirp, m, fb = _bluestein_plan(n, x.dtype.type)
    a = np.zeros(x.shape[:-1] + (m,), dtype=x.dtype)
    a[..., :n] = x * chirp
    conv = _ifft_last(_fft_last(a) * fb)
    return conv[..., :n] * chirp


def _fft_last(x: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along the last axis of a complex array (dtype preserved).

    Small transforms (n <= ``_LEAF_SIZE``) and primes up to
    ``_MAX_DIRECT_RADIX`` are applied as dense DFT-matrix products; larger composite sizes recurse by
    decimation in time; large primes go through Bluestein.
    """
    n = x.shape[-1]
    dtype = x.dtype.type
    if n == 1:
        return x.copy()
    p = _smallest_factor(n)
    if n <= _LEAF_SIZE or (p == n and n <= _MAX_DIRECT_RADIX):
        return x @ _dft_matrix(n, dtype)
    if p == n:
        return _bluestein(x)
    m = n // p
    # decimation in time: residue classes r = j mod p, each a length-m transform
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    sub = _fft_last(sub) * _twiddles(p, m, dtype)
    out = _dft_matrix(p, dtype) @ sub
    return out.reshape(x.shape[:-1] + (n,))


def _ifft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.conj(_fft_last(np.conj(x))) / n


def _as_complex_array(x) -> np.ndarray:
    x = np.asarray(x)
    return x.astype(_cdtype(x), copy=False)


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized 1D DFT of a numpy array along ``axis``."""
    x = np.moveaxis(_as_complex_array(x), axis, -1)
    return np.moveaxis(_fft_last(x), -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(_as_complex_array(x), axis, -1)
    return np.moveaxis(_ifft_last(x), -1, axis)


def fft2_array(x: np.ndarray) -> np.ndarray:
    """2D DFT over the two trailing axes of a numpy array."""
    x = _as_complex_array(x)
    n = x.shape[-1]
    if n == x.shape[-2] and n <= _LEAF_SIZE:
        f = _dft_matrix(n, x.dtype.type)
        return f @ x @ f
    out = _fft_last(x)
    return np.swapaxes(_fft_last(np.swapaxes(out, -1, -2)), -1, -2)


def ifft2_array(x: np.ndarray) -> np.ndarray:
    x = _as_complex_array(x)
    n = x.shape[-1] * x.shape[-2]
    return np.conj(fft2_array(np.conj(x))) / n


def _check_square(shape: tuple, op: str) -> int:
    if len(shape) < 2 or shape[-1] != shape[-2]:
        raise ValueError(f"{op}: trailing spatial dims must be square, got {shape}")
    return shape[-1]


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def dft2_naive(x) -> Spectrum:
    """Direct O(w^4) double sum over the trailing two axes. Oracle only."""
    z = x.numpy() if isinstance(x, ComplexTensor) else np.asarray(x, dtype=complex)
    w = _check_square(z.shape, "dft2_naive")
    out = np.zeros(z.shape, dtype=complex)
    idx = np.arange(w)
    for u in range(w):
        for v in range(w):
            basis = np.exp(-2j * np.pi * (u * idx[:, None] + v * idx[None, :]) / w)
            out[..., u, v] = (z * basis).sum(axis=(-1, -2))
    return Spectrum(ComplexTensor.from_numpy(out), Layout.NATURAL)


def circular_convolve_naive(x: np.ndarray, y: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """``scale * sum_{m,n} x[m,n] y[(j-m) mod N, (k-n) mod N]`` by explicit modular indexing."""
    n = x.shape[-1]
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape), dtype=np.result_type(x, y))
    for j in range(n):
        for k in range(n):
            total = 0
            for m in range(n):
                for q in range(n):
                    total = total + x[..., m, q] * y[..., (j - m) % n, (k - q) % n]
            out[..., j, k] = total
    return scale * out


# ---------------------------------------------------------------------------
# differentiable transforms
# ---------------------------------------------------------------------------

def _split(z: np.ndarray, dtype) -> tuple:
    return np.ascontiguousarray(z.real, dtype=dtype), np.ascontiguousarray(z.imag, dtype=dtype)


def _complex_linear_map(x: ComplexTensor, forward, adjoint) -> ComplexTensor:
    """Wrap a complex-linear numpy map ``forward`` whose adjoint is ``adjoint``.

    With real-pair gradients ``g = dL/dre + i dL/dim``, the input gradient of
    a linear map ``A`` is ``A^H g``.
    """
    dtype = x.dtype
    z = forward(x.re.data + 1j * x.im.data)
    re, im = _split(z, dtype)
    # each component's backward applies the adjoint to its own part of g
    out_re = _node(re, (x.re, x.im), lambda g: _split(adjoint(g + 0j), dtype))
    out_im = _node(im, (x.re, x.im), lambda g: _split(adjoint(1j * g), dtype))
    return ComplexTensor(out_re, out_im)


def fft2(x) -> Spectrum:
    """Differentiable 2D FFT of (..., w, w) complex input; natural layout."""
    x = x if isinstance(x, ComplexTensor) else ComplexTensor(x)
    _check_square(x.shape, "fft2")
    n = x.shape[-1] ** 2
    data = _complex_linear_map(x, fft2_array, lambda g: n * ifft2_array(g))
    return Spectrum(data, Layout.NATURAL)


def ifft2(spec) -> ComplexTensor:
    """Inverse 2D FFT with the ``1/w^2`` scaling; accepts a natural-layout spectrum."""
    if isinstance(spec, Spectrum):
        if spec.layout is not Layout.NATURAL:
            raise ValueError("ifft2: spectrum must be in natural layout (call ifftshift first)")
        x = spec.data
    else:
        x = spec
    _check_square(x.shape, "ifft2")
    n = x.shape[-1] ** 2
    return _complex_linear_map(x, ifft2_array, lambda g: fft2_array(g) / n)


def _roll(x: ComplexTensor, shift: int) -> ComplexTensor:
    def one(t: Tensor) -> Tensor:
        return _node(np.roll(t.data, shift, axis=(-2, -1)), (t,),
                     lambda g: (np.roll(g, -shift, axis=(-2, -1)),))

    return ComplexTensor(one(x.re), one(x.im))


def fftshift(spec: Spectrum) -> Spectrum:
    """Cyclic shift by floor(w/2) on both axes; DC moves to (w//2, w//2)."""
    if spec.layout is not Layout.NATURAL:
        raise ValueError("fftshift: spectrum is already centered")
    return Spectrum(_roll(spec.data, spec.size // 2), Layout.CENTERED)


def ifftshift(spec: Spectrum) -> Spectrum:
    if spec.layout is not Layout.CENTERED:
        raise ValueError("ifftshift: spectrum is not centered")
    return Spectrum(_roll(spec.data, -(spec.size // 2)), Layout.NATURAL)


def compand(spec: Spectrum, exponent: float = COMPAND_EXPONENT) -> Spectrum:
    """Zero the DC entry and map ``z -> |z|^exponent * exp(i angle z)`` elsewhere."""
    if spec.layout is not Layout.CENTERED:
        raise ValueError("compand: expects a centered spectrum")
    z = spec.data
    w = spec.size
    r2 = z.re * z.re + z.im * z.im
    # |z|^p e^{i angle z} = z |z|^(p-1); the scale is 0 at z = 0 (gradient too)
    scale = safe_pow(r2, (exponent - 1) / 2)
    keep = np.ones((w, w))
    keep[w // 2, w // 2] = 0
    scale = where_mask(scale, keep)
    return Spectrum(ComplexTensor(mul(z.re, scale), mul(z.im, scale)), Layout.CENTERED)
