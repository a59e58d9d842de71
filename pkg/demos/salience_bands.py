"""Split a HiResCAM map into the contributions of each frequency sub-band.

Masking the gradient of every branch but one gives that band's share of the
map; because back-propagation is linear in the branch sum, the shares add
back up to the unmasked map.

    python demos/salience_bands.py
"""
import numpy as np

from psychonet import analysis as an
from psychonet import autograd as ag
from psychonet.models import build


def main():
    rng = np.random.default_rng(1)
    with ag.precision(np.float64):
        model = build("model-i")
        image = rng.normal(size=(3, 32, 32))
        full = an.hirescam_raw(model, image, label=3, layer=-1)
        shares = [an.hirescam_raw(model, image, 3, -1, ("band", b)) for b in range(len(model.dvc.bands))]
    for b, (band, share) in enumerate(zip(model.dvc.bands, shares)):
        frac = np.abs(share).sum() / np.abs(full).sum()
        print(f"band {b} [{band.crop}, {band.drop}]: |share| / |full| = {frac:.2f}")
    print("max |sum of shares - full map| =", np.abs(sum(shares) - full).max())
    sal = an.hirescam_masked(model, image, 3, -1, ("band", 0))
    print("normalized band-0 map:", sal.values.shape, "range", sal.values.min(), sal.values.max())


if __name__ == "__main__":
    main()
