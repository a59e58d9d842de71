"""Quick numerical self-checks run by ``psychonet selftest`` (64-bit)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import autograd as ag
from .autograd import ComplexTensor, Tensor
from .blocks import HadamardBlock, SubBandSpec, band_indices, check_disjoint
from .complex_nn import ComplexBatchNorm2d, ComplexConv2d, complex_conv2d
from .nn import ConvBlock, DWConvBlock
from .spectral import circular_convolve_naive, dft2_naive, fft2, fft2_array, ifft2


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tol)


def _rand_complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def _fft_vs_naive(rng):
    z = _rand_complex(rng, (2, 6, 6))
    return np.abs(fft2(ComplexTensor.from_numpy(z)).numpy() - dft2_naive(z).numpy()).max()


def _roundtrip(rng):
    z = _rand_complex(rng, (2, 3, 14, 14))
    return np.abs(ifft2(fft2(ComplexTensor.from_numpy(z))).numpy() - z).max()


def _parseval(rng):
    z = _rand_complex(rng, (16, 16))
    lhs = np.sum(np.abs(z) ** 2)
    rhs = np.sum(np.abs(fft2_array(z)) ** 2) / z.size
    return abs(lhs - rhs) / lhs


def _conv_theorem(rng):
    x, y = _rand_complex(rng, (6, 6)), _rand_complex(rng, (6, 6))
    lhs = fft2_array(circular_convolve_naive(x, y))
    rhs = fft2_array(x) * fft2_array(y)
    return np.abs(lhs - rhs).max() / np.abs(rhs).max()


def _complex_conv(rng):
    h = _rand_complex(rng, (2, 3, 5, 5))
    w = _rand_complex(rng, (4, 3, 1, 1))
    out = complex_conv2d(ComplexTensor.from_numpy(h), Tensor(w.real), Tensor(w.imag)).numpy()
    ref = np.einsum("oi,nihw->nohw", w[:, :, 0, 0], h)
    return np.abs(out - ref).max()


def _whitening(rng):
    z = 3.0 * _rand_complex(rng, (16, 4, 6, 6)) + 0.5 * rng.normal(size=(1, 4, 1, 1))
    bn = ComplexBatchNorm2d(4)
    bn.gamma_rr = bn.gamma_ri = bn.gamma_ii = None
    out = bn(ComplexTensor.from_numpy(z)).numpy()
    a, b = out.real, out.imag
    ax = (0, 2, 3)
    return max(np.abs(a.mean(ax)).max(), np.abs(b.mean(ax)).max(), np.abs(a.var(ax) - 1).max(),
               np.abs(b.var(ax) - 1).max(), np.abs((a * b).mean(ax)).max())


def _bands():
    worst = 0
    for w, pairs in ((16, [[8, 4], [4, 1]]), (14, [[14, 8], [8, 4], [4, 1]])):
        specs = [SubBandSpec(c, d) for c, d in pairs]
        check_disjoint(specs, w)
        covered = set().union(*(band_indices(s, w) for s in specs))
        expected = pairs[0][0] ** 2 - pairs[-1][1] ** 2
        worst = max(worst, abs(len(covered) - expected))
    return float(worst)


def _gradcheck_layer(rng, make, shape, complex_in):
    layer = make()
    layer.train()
    if complex_in:
        x = ComplexTensor.from_numpy(_rand_complex(rng, shape))
        x.re.requires_grad = x.im.requires_grad = True
    else:
        x = Tensor(rng.normal(size=shape), requires_grad=True)
    probe = rng.normal(size=layer(x).shape)

    def f():
        y = layer(x)
        if isinstance(y, ComplexTensor):
            return ag.add(ag.tsum(ag.mul(y.re, probe)), ag.tsum(ag.mul(y.im, probe)))
        return ag.tsum(ag.mul(y, probe))

    return ag.gradcheck(f, [x] + layer.parameters(), eps=1e-4, max_coords=12, rng=rng)


def checks() -> List[tuple]:
    g = _gradcheck_layer
    return [
        ("fft2 vs naive DFT (6x6)", _fft_vs_naive, 1e-9),
        ("fft round trip", _roundtrip, 1e-6),
        ("Parseval", _parseval, 1e-6),
        ("convolution theorem", _conv_theorem, 1e-5),
        ("complex conv vs complex arithmetic", _complex_conv, 1e-6),
        ("complex BN whitening", _whitening, 1e-5),
        ("sub-band disjointness/coverage", lambda rng: _bands(), 0.5),
        ("gradcheck ConvBlock", lambda rng: g(rng, lambda: ConvBlock(2, 3, rng=rng), (3, 2, 5, 5), False), 1e-4),
        ("gradcheck DWConvBlock", lambda rng: g(rng, lambda: DWConvBlock(2, 3, 2, rng=rng), (3, 2, 6, 6), False), 1e-4),
        ("gradcheck ComplexConv2d", lambda rng: g(rng, lambda: ComplexConv2d(2, 3, 3, rng=rng), (2, 2, 4, 4), True), 1e-4),
        ("gradcheck ComplexBatchNorm2d", lambda rng: g(rng, lambda: ComplexBatchNorm2d(3), (3, 3, 3, 3), True), 1e-4),
        ("gradcheck HadamardBlock", lambda rng: g(rng, lambda: HadamardBlock(3, 4, 2, rng=rng), (3, 3, 4, 4), True), 1e-4),
    ]


def run(report: Callable[[Check], None] = lambda c: None, seed: int = 0) -> List[Check]:
    results = []
    with ag.precision(np.float64):
        for name, fn, tol in checks():
            rng = np.random.default_rng(seed)
            try:
                value = float(fn(rng))
            except Exception:  # a crashing check is a failing check
                value = float("nan")
            c = Check(name, value, tol)
            report(c)
            results.append(c)
    return results
