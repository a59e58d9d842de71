import numpy as np
import pytest
from scipy.spatial.distance import pdist

from psychonet import analysis as an
from psychonet.autograd import Tensor
from psychonet.models import build

from conftest import complex_randn
from oracles import gram_pca


@pytest.fixture
def micro(f64):
    return build("micro")


@pytest.fixture
def images(rng):
    return rng.normal(size=(10, 3, 8, 8))


# ---------------------------------------------------------------------------
# filter PCA
# ---------------------------------------------------------------------------

def test_single_filter_is_its_own_component(rng):
    bank = complex_randn(rng, 1, 4, 4)
    pca = an.filter_pca(bank, 1)
    mag = np.abs(bank).ravel()
    np.testing.assert_allclose(pca.components[0], mag / np.linalg.norm(mag), atol=1e-12)


def test_components_orthonormal(rng):
    pca = an.filter_pca(complex_randn(rng, 12, 4, 4), 4)
    gram = pca.components @ pca.components.T
    assert np.abs(gram - np.eye(4)).max() < 1e-6


def test_eigenvalues_match_gram_oracle(rng):
    bank = complex_randn(rng, 9, 5, 5)
    pca = an.filter_pca(bank, 3)
    ref_vals, ref_comps = gram_pca(np.abs(bank).reshape(9, -1), 3)
    np.testing.assert_allclose(pca.eigenvalues, ref_vals, atol=1e-6)
    # same subspace, same sign convention up to the sign rule
    for c, r in zip(pca.components, ref_comps):
        assert abs(abs(c @ r) - 1) < 1e-6


def test_sign_rule(rng):
    pca = an.filter_pca(complex_randn(rng, 6, 3, 3), 2)
    for c in pca.components:
        assert c[np.argmax(np.abs(c))] > 0


def test_images_are_upsampled_and_normalized(rng):
    pca = an.filter_pca(complex_randn(rng, 5, 4, 4), 2)
    for img in pca.images:
        assert img.shape == (16, 16)
        assert img.min() == 0 and img.max() == 1


@pytest.mark.parametrize("k", [0, 6])
def test_k_out_of_range(rng, k):
    with pytest.raises(ValueError, match="k="):
        an.filter_pca(complex_randn(rng, 5, 4, 4), k)


def test_filter_bank_from_model(micro):
    bank = an.filter_bank(micro, 1)
    assert bank.shape == (4, 2, 2) and np.iscomplexobj(bank)
    with pytest.raises(IndexError):
        an.filter_bank(micro, 2)


# ---------------------------------------------------------------------------
# KPCA-CAM
# ---------------------------------------------------------------------------

def test_constant_activations_give_zeros():
    sal = an.kpca_cam(np.full((4, 6, 6), 2.5))
    np.testing.assert_array_equal(sal.values, 0)


def test_linear_kernel_matches_pca(rng):
    a = rng.normal(size=(5, 6, 6))
    samples = a.reshape(5, -1).T
    proj = an.kpca_projection(samples, 0, kernel="linear")
    xc = samples - samples.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    ref = an._fix_sign(xc @ vt[0])
    assert np.abs(proj - ref).max() < 1e-6


def test_blob_lights_up(rng):
    a = np.zeros((3, 12, 12))
    a[1, 3:6, 7:10] = 1.0
    sal = an.kpca_cam(a).values
    inside = np.zeros((12, 12), bool)
    inside[3:6, 7:10] = True
    assert sal[inside].min() >= 0.9
    assert sal[~inside].max() <= 0.1


def test_invariant_to_channel_permutation(rng):
    a = rng.normal(size=(6, 5, 5))
    perm = rng.permutation(6)
    np.testing.assert_allclose(an.kpca_cam(a).values, an.kpca_cam(a[perm]).values, atol=1e-10)


def test_kpca_cam_accepts_complex_part(rng):
    z = complex_randn(rng, 1, 3, 4, 4)
    im = an.kpca_cam(z, part="im", layer="layers.1")
    np.testing.assert_allclose(im.values, an.kpca_cam(z.imag[0]).values)
    assert im.condition == "kpca:rbf:0" and im.layer == "layers.1"


def test_unknown_kernel(rng):
    with pytest.raises(ValueError, match="kernel"):
        an.kpca_projection(rng.normal(size=(5, 2)), kernel="poly")


# ---------------------------------------------------------------------------
# HiResCAM
# ---------------------------------------------------------------------------

def test_masking_every_band_gives_zero(micro, images):
    raw = an.hirescam_raw(micro, images[0], 1, -1, "none")
    np.testing.assert_array_equal(raw, 0)


def test_all_mask_is_vanilla_hirescam(micro, images):
    from psychonet import autograd as ag
    raw = an.hirescam_raw(micro, images[0], 0, -1, "all")
    micro.eval()
    score = micro(Tensor(images[:1]))[0, 0]
    act = micro.activations[-1]
    g_re, g_im = ag.grad(score, [act.re, act.im])
    ref = (g_re * act.re.data + g_im * act.im.data).sum(axis=1)[0]
    np.testing.assert_allclose(raw, ref, atol=1e-12)


@pytest.mark.parametrize("layer", [0, 1])
def test_band_maps_sum_to_full(micro, images, layer):
    for img in images:
        full = an.hirescam_raw(micro, img, 1, layer, "all")
        parts = sum(an.hirescam_raw(micro, img, 1, layer, ("band", i)) for i in range(2))
        assert np.abs(parts - full).max() < 1e-5


def test_channel_maps_sum_to_band(micro, images):
    band = an.hirescam_raw(micro, images[0], 0, -1, ("band", 0))
    chans = sum(an.hirescam_raw(micro, images[0], 0, -1, ("channel", 0, c)) for c in range(3))
    assert np.abs(chans - band).max() < 1e-10


def test_state_restored(micro, images):
    micro.train()
    an.hirescam_raw(micro, images[0], 0, -1, ("band", 1))
    assert micro.training and micro.dvc.grad_masks is None
    assert all(p.grad is None for p in micro.parameters())


def test_masked_map_normalized(micro, images):
    sal = an.hirescam_masked(micro, images[0], 1, -1, ("band", 0))
    assert sal.values.shape == (4, 4)
    assert 0 <= sal.values.min() and sal.values.max() <= 1
    assert sal.condition == "band:0" and sal.layer == "layers.-1"


@pytest.mark.parametrize("kwargs,err", [
    ({"layer": 2}, IndexError),
    ({"label": 2}, IndexError),
    ({"mask": ("band", 2)}, IndexError),
    ({"mask": ("channel", 0, 3)}, IndexError),
    ({"mask": "some"}, ValueError),
])
def test_bad_selectors(micro, images, kwargs, err):
    args = {"label": 0, "layer": -1, "mask": "all", **kwargs}
    with pytest.raises(err):
        an.hirescam_raw(micro, images[0], **args)


# ---------------------------------------------------------------------------
# feature projection
# ---------------------------------------------------------------------------

def test_line_has_no_second_variance(rng):
    t = rng.normal(size=(20, 1))
    coords, var = an.feature_projection(t * rng.normal(size=(1, 7)) + 3.0)
    assert var[1] < 1e-20 * var[0] + 1e-24
    assert np.abs(coords[:, 1]).max() < 1e-10


def test_projection_is_isometric_on_planar_data(rng):
    plane = rng.normal(size=(15, 2))
    basis, _ = np.linalg.qr(rng.normal(size=(9, 2)))
    coords, _ = an.feature_projection(plane @ basis.T + rng.normal(size=9))
    assert np.abs(pdist(coords) - pdist(plane)).max() < 1e-6


def test_projection_matches_gram_oracle(rng):
    x = rng.normal(size=(12, 6)) * np.arange(1, 7)
    coords, var = an.feature_projection(x)
    ref_vals, _ = gram_pca(x, 2)
    np.testing.assert_allclose(var, ref_vals, rtol=1e-10)
    np.testing.assert_allclose(coords.var(axis=0, ddof=1), ref_vals, rtol=1e-10)


def test_complex_features_concatenated(rng):
    z = complex_randn(rng, 8, 3)
    a, _ = an.feature_projection(z)
    b, _ = an.feature_projection(np.concatenate([z.real, z.imag], axis=1))
    np.testing.assert_allclose(a, b)


def test_too_few_samples(rng):
    with pytest.raises(ValueError, match="at least 3"):
        an.feature_projection(rng.normal(size=(2, 4)))


def test_extract_features_and_csv(tmp_path, micro, images):
    feats = an.extract_features(micro, images, batch_size=4)
    assert feats.shape == (10, 6) and np.iscomplexobj(feats)
    layer_feats = an.extract_features(micro, images, batch_size=4, layer=0)
    assert layer_feats.shape == (10, 4)
    coords, _ = an.feature_projection(feats)
    path = tmp_path / "p.csv"
    an.write_coordinates(path, coords, range(10))
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,label" and len(lines) == 11
    assert float(lines[1].split(",")[0]) == coords[0, 0]


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def test_pgm_pixel_bytes():
    raw = an.encode_pgm(np.array([[0, 1], [1, 0]]))
    assert raw == b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0])


def test_pgm_header_non_square():
    assert an.encode_pgm(np.zeros((3, 5))).startswith(b"P5\n5 3\n255\n")


def test_pgm_round_trip(tmp_path, rng):
    v = rng.random((7, 4))
    an.write_pgm(tmp_path / "m.pgm", v)
    assert np.abs(an.read_pgm(tmp_path / "m.pgm") - v).max() <= 1 / 255


@pytest.mark.parametrize("bad", [np.array([[1.5]]), np.array([[np.nan]]), np.zeros(4)])
def test_pgm_rejects_bad_maps(bad):
    with pytest.raises(ValueError):
        an.encode_pgm(bad)


def test_normalize_constant_is_zero():
    np.testing.assert_array_equal(an.normalize01(np.full((3, 3), 7.0)), 0)
