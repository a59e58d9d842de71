"""Walk through the frequency-domain pieces on a single synthetic image.

    python demos/spectral_tour.py
"""
import numpy as np

from psychonet import autograd as ag
from psychonet.autograd import ComplexTensor
from psychonet.blocks import SubBandSpec, band_indices, check_disjoint, dropcrop
from psychonet.spectral import compand, fft2, fftshift, ifft2


def main():
    rng = np.random.default_rng(0)
    yy, xx = np.mgrid[0:16, 0:16]
    img = np.sin(0.9 * xx + 0.3 * yy) + 0.1 * rng.normal(size=(16, 16))

    with ag.precision(np.float64):
        x = ComplexTensor.from_numpy(img[None, None].astype(complex))
        X = fft2(x)
        print("max |fft2 - numpy.fft.fft2|:", np.abs(X.numpy()[0, 0] - np.fft.fft2(img)).max())
        print("round-trip error:", np.abs(ifft2(X).numpy()[0, 0] - img).max())

        centered = fftshift(X)
        peak = np.unravel_index(np.argmax(np.abs(centered.numpy()[0, 0])), (16, 16))
        print("strongest frequency in the centered spectrum:", peak, "(DC sits at (8, 8))")

        squashed = compand(centered)
        mag_before = np.abs(centered.numpy()).max()
        mag_after = np.abs(squashed.numpy()).max()
        print(f"companding shrinks the peak magnitude {mag_before:.1f} -> {mag_after:.1f}; DC is now",
              squashed.numpy()[0, 0, 8, 8])

        bands = [SubBandSpec(8, 4), SubBandSpec(4, 1)]
        check_disjoint(bands, 16)
        total = np.sum(np.abs(squashed.numpy()) ** 2)
        for b in bands:
            kept = np.sum(np.abs(dropcrop(squashed, b).numpy()) ** 2)
            print(f"band [{b.crop}, {b.drop}]: {len(band_indices(b, 16)):3d} frequencies, "
                  f"{kept / total:.1%} of the companded energy")


if __name__ == "__main__":
    main()
