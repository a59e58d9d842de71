"""Frequency sub-bands, Hadamard filter blocks, the DVC module and Phasor blocks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ComplexParameter, ComplexTensor, Tensor
from .complex_nn import ComplexBatchNorm2d, ComplexConv2d, complex_avgpool_global, complex_gelu
from .nn import ConvBlock, DWConvBlock, Module, ModuleList, default_rng
from .spectral import COMPAND_EXPONENT, Layout, Spectrum, compand, fft2, fftshift

FILTER_INIT_STD = 0.02


@dataclass(frozen=True)
class SubBandSpec:
    """A square-annulus sub-band: keep the centered ``crop`` window minus its central ``drop`` window."""

    crop: int
    drop: int
    source: int = -1

    def validate(self, w: int) -> None:
        if not (0 <= self.drop < self.crop <= w):
            raise ValueError(f"sub-band [{self.crop}, {self.drop}] invalid for spectrum size {w}")


def window_start(w: int, c: int) -> int:
    return w // 2 - c // 2


def band_indices(spec: SubBandSpec, w: int) -> set:
    """Global (u, v) spectrum positions retained by ``spec`` on a centered w x w map."""
    spec.validate(w)
    s = window_start(w, spec.crop)
    d = window_start(w, spec.drop)
    keep = set()
    for u in range(s, s + spec.crop):
        for v in range(s, s + spec.crop):
            if not (d <= u < d + spec.drop and d <= v < d + spec.drop):
                keep.add((u, v))
    return keep


def check_disjoint(specs: Sequence[SubBandSpec], w: int) -> None:
    """Raise if two sub-bands read the same spectrum position."""
    seen: Dict[tuple, int] = {}
    for i, spec in enumerate(specs):
        for idx in band_indices(spec, w):
            if idx in seen:
                raise ValueError(f"sub-bands {seen[idx]} and {i} overlap at frequency {idx}")
            seen[idx] = i


def dropcrop(spec: Spectrum, band: SubBandSpec) -> Spectrum:
    """Crop a centered spectrum to ``band.crop`` and zero the central ``band.drop`` window."""
    if spec.layout is not Layout.CENTERED:
        raise ValueError("dropcrop: expects a centered spectrum")
    w = spec.size
    band.validate(w)
    s = window_start(w, band.crop)
    window = spec.data[..., s:s + band.crop, s:s + band.crop]
    if band.drop:
        keep = np.ones((band.crop, band.crop))
        d = window_start(band.crop, band.drop)
        keep[d:d + band.drop, d:d + band.drop] = 0
        window = ComplexTensor(ag.where_mask(window.re, keep), ag.where_mask(window.im, keep))
    return Spectrum(window, Layout.CENTERED)


def split_softmax(z: ComplexTensor, axis: int = 1) -> ComplexTensor:
    """Softmax of the real and imaginary parts independently along ``axis``."""
    return ComplexTensor(ag.softmax(z.re, axis), ag.softmax(z.im, axis))


def _mask_complex(z: ComplexTensor, mask) -> ComplexTensor:
    if mask is None:
        return z
    return ComplexTensor(ag.mask_grad(z.re, mask), ag.mask_grad(z.im, mask))


class HadamardBlock(Module):
    """Elementwise complex filter, channel softmax, complex BN, 1x1 complex mix, complex GELU."""

    layer_kind = "filter"

    def __init__(self, d_in: int, crop: int, d_filter: int, rng=None):
        super().__init__()
        rng = default_rng(rng)
        shape = (d_in, crop, crop)
        self.crop = crop
        self.filter = ComplexParameter(rng.normal(0, FILTER_INIT_STD, shape), rng.normal(0, FILTER_INIT_STD, shape))
        self.norm = ComplexBatchNorm2d(d_in)
        self.mix = ComplexConv2d(d_in, d_filter, 1, bias=True, rng=rng)

    def filtered(self, x) -> ComplexTensor:
        """Split softmax of ``x * W`` (before normalization and mixing)."""
        z = x.data if isinstance(x, Spectrum) else x
        if z.shape[-2:] != (self.crop, self.crop):
            raise ValueError(f"hadamard block expects {self.crop}x{self.crop} input, got {z.shape[-2:]}")
        if z.shape[1] != self.filter.shape[0]:
            raise ValueError(f"hadamard block expects {self.filter.shape[0]} channels, got {z.shape[1]}")
        return split_softmax(ag.complex_mul(z, self.filter), axis=1)

    def forward(self, x) -> ComplexTensor:
        return complex_gelu(self.mix(self.norm(self.filtered(x))))


class SpectralBranches(Module):
    """Parallel DropCrop + Hadamard paths over sub-bands of one centered spectrum."""

    def __init__(self, bands: Sequence[SubBandSpec], d_in, d_filter: int, rng=None):
        super().__init__()
        self.bands = tuple(bands)
        d_ins = list(d_in) if isinstance(d_in, (list, tuple)) else [d_in] * len(self.bands)
        self.blocks = ModuleList(HadamardBlock(d, b.crop, d_filter, rng=rng) for d, b in zip(d_ins, self.bands))

    def check(self, sizes: Dict[int, int]) -> None:
        """Validate bands against the spectrum size of each source; bands sharing a source must be disjoint."""
        by_source: Dict[int, list] = {}
        for b in self.bands:
            by_source.setdefault(b.source, []).append(b)
        for src, group in by_source.items():
            check_disjoint(group, sizes[src])

    def forward(self, spectra: Dict[int, Spectrum]) -> list:
        return [blk(dropcrop(spectra[b.source], b)) for b, blk in zip(self.bands, self.blocks)]


def spectrum_of(x: ComplexTensor, exponent: float = COMPAND_EXPONENT) -> Spectrum:
    """fft2, center, compand."""
    return compand(fftshift(fft2(x)), exponent)


class DVC(Module):
    """Learnable frequency-domain coding: spectrum, sub-band branches, pooling, concatenation.

    ``grad_masks`` optionally maps a branch index to a multiplier on the
    gradient leaving that branch (a scalar, or a per-channel vector); branches
    not listed pass gradients unchanged. A value of ``0`` blocks the branch.
    """

    def __init__(self, bands: Sequence[SubBandSpec], d_in, d_filter: int,
                 exponent: float = COMPAND_EXPONENT, rng=None):
        super().__init__()
        self.exponent = exponent
        self.d_filter = d_filter
        self.branches = SpectralBranches(bands, d_in, d_filter, rng=rng)
        self.grad_masks: Optional[Dict[int, object]] = None
        self.last_branch_outputs: list = []

    @property
    def bands(self):
        return self.branches.bands

    @property
    def d_out(self) -> int:
        return self.d_filter * len(self.bands)

    def forward(self, features) -> ComplexTensor:
        if not isinstance(features, dict):
            features = {-1: ag.as_complex(features)}
        sources = {b.source for b in self.bands}
        spectra = {s: spectrum_of(features[s], self.exponent) for s in sources}
        self.branches.check({s: spectra[s].size for s in sources})
        outs = self.branches(spectra)
        self.last_branch_outputs = outs
        pooled = []
        for i, y in enumerate(outs):
            mask = None if self.grad_masks is None else self.grad_masks.get(i)
            if mask is not None and np.ndim(mask) == 1:
                mask = np.asarray(mask)[None, :, None, None]
            pooled.append(complex_avgpool_global(_mask_complex(y, mask)))
        return ag.complex_concat(pooled, axis=1)


class PhasorI(Module):
    """Real features to complex: conv path gives the real part, depthwise path the imaginary part."""

    def __init__(self, d_in: int, d_out: int, stride: int = 1, rng=None):
        super().__init__()
        self.real_path = ConvBlock(d_in, d_out, 3, stride, rng=rng)
        self.imag_path = ModuleList([DWConvBlock(d_in, d_out, stride, rng=rng), DWConvBlock(d_out, d_out, rng=rng)])
        self.mix = ComplexConv2d(d_out, d_out, 1, rng=rng)
        self.norm = ComplexBatchNorm2d(d_out)

    def forward(self, x: Tensor) -> ComplexTensor:
        a = self.real_path(x)
        b = x
        for blk in self.imag_path:
            b = blk(b)
        return complex_gelu(self.norm(self.mix(ComplexTensor(a, b))))


class PhasorC(Module):
    """Complex refinement block.

    The top branch makes new real features from ``re(h)`` with ConvBlocks and
    new imaginary features from ``im(h)`` with DWConvBlocks (``n_conv`` of each,
    the first carrying the stride). The bottom branch is a 1x1 complex conv over
    the (strided) original features concatenated with the new ones.
    """

    def __init__(self, d_in: int, d_out: int, stride: int = 1, n_conv: int = 2, rng=None):
        super().__init__()
        if n_conv < 1:
            raise ValueError("phasor_c: n_conv must be >= 1")
        self.stride = stride
        self.real_path = ModuleList(
            ConvBlock(d_in if i == 0 else d_out, d_out, 3, stride if i == 0 else 1, rng=rng) for i in range(n_conv))
        self.imag_path = ModuleList(
            DWConvBlock(d_in if i == 0 else d_out, d_out, stride if i == 0 else 1, rng=rng) for i in range(n_conv))
        self.mix = ComplexConv2d(d_in + d_out, d_out, 1, rng=rng)
        self.norm = ComplexBatchNorm2d(d_out)

    def forward(self, h: ComplexTensor) -> ComplexTensor:
        a, b = h.re, h.im
        for blk in self.real_path:
            a = blk(a)
        for blk in self.imag_path:
            b = blk(b)
        s = self.stride
        skip = h[:, :, ::s, ::s] if s > 1 else h
        fused = ag.complex_concat([skip, ComplexTensor(a, b)], axis=1)
        return complex_gelu(self.norm(self.mix(fused)))


class SimpleConvBlock(Module):
    """Two stacks of 3x3 conv, BN, GELU; the first carries the stride."""

    def __init__(self, d_in: int, d_out: int, stride: int = 1, rng=None):
        super().__init__()
        self.first = ConvBlock(d_in, d_out, 3, stride, rng=rng)
        self.second = ConvBlock(d_out, d_out, 3, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.second(self.first(x))
