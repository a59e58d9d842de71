import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psychonet import data
from psychonet.data import DatasetError


@pytest.fixture
def one_record_dir(tmp_path):
    """A dataset whose every file holds a single all-255 image with label 7."""
    img = np.full((1, 3, 32, 32), 255, np.uint8)
    rec = data.encode_records(img, np.array([7]))
    for name in data.TRAIN_FILES + data.TEST_FILES:
        (tmp_path / name).write_bytes(rec)
    return tmp_path


def test_record_layout():
    assert data.RECORD_BYTES == 1 + 3 * 32 * 32
    assert data.RECORD_BYTES * 10_000 == 30_730_000


def test_synthetic_file_sizes(synthetic_dir):
    for name in data.TRAIN_FILES + data.TEST_FILES:
        assert (synthetic_dir / name).stat().st_size == 100 * data.RECORD_BYTES


def test_read_batch_decodes_channels_in_order(tmp_path):
    rec = np.zeros(data.RECORD_BYTES, np.uint8)
    rec[0] = 3
    rec[1:1025] = 10      # R
    rec[1025:2049] = 20   # G
    rec[2049:] = 30       # B
    path = tmp_path / "b.bin"
    path.write_bytes(rec.tobytes())
    images, labels = data.read_batch(path)
    assert labels.tolist() == [3]
    assert images.shape == (1, 3, 32, 32)
    assert images[0, :, 5, 7].tolist() == [10, 20, 30]


def test_pixel_255_maps_to_one():
    x = data.standardize(np.full((1, 3, 2, 2), 255, np.uint8), np.zeros(3), np.ones(3))
    np.testing.assert_array_equal(x, 1.0)


def test_train_means_near_zero(synthetic_sets):
    train, test = synthetic_sets
    assert np.abs(train.images.astype(np.float64).mean(axis=(0, 2, 3))).max() < 1e-6
    assert np.abs(train.images.astype(np.float64).std(axis=(0, 2, 3)) - 1).max() < 1e-5
    assert len(train) == 500 and len(test) == 100
    assert train.images.dtype == np.float32 and train.labels.dtype == np.int64


def test_test_split_uses_train_statistics(synthetic_sets):
    train, test = synthetic_sets
    np.testing.assert_array_equal(train.mean, test.mean)


def test_corrupt_size_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\0" * (data.RECORD_BYTES + 5))
    with pytest.raises(DatasetError, match="corrupt"):
        data.read_batch(path)


def test_bad_label_rejected(tmp_path):
    rec = np.zeros((2, data.RECORD_BYTES), np.uint8)
    rec[1, 0] = 10
    path = tmp_path / "bad.bin"
    path.write_bytes(rec.tobytes())
    with pytest.raises(DatasetError, match="label 10"):
        data.read_batch(path)


def test_missing_files(tmp_path):
    (tmp_path / "data_batch_1.bin").write_bytes(b"")
    with pytest.raises(DatasetError, match="missing"):
        data.load_cifar10(tmp_path)


def test_no_directory(monkeypatch):
    monkeypatch.delenv(data.ENV_DIR, raising=False)
    with pytest.raises(DatasetError, match=data.ENV_DIR):
        data.resolve_dir(None)


def test_env_var_and_nested_directory(monkeypatch, tmp_path, one_record_dir):
    nested = tmp_path / "outer"
    (nested / "cifar-10-batches-bin").mkdir(parents=True)
    for f in one_record_dir.glob("*.bin"):
        (nested / "cifar-10-batches-bin" / f.name).write_bytes(f.read_bytes())
    monkeypatch.setenv(data.ENV_DIR, str(nested))
    assert data.resolve_dir() == nested / "cifar-10-batches-bin"
    train, _ = data.load_cifar10()
    assert train.labels.tolist() == [7] * 5


def test_subset_takes_leading_records(synthetic_sets):
    train, _ = synthetic_sets
    sub = train.subset(7)
    np.testing.assert_array_equal(sub.labels, train.labels[:7])
    assert train.subset(None) is train


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@pytest.fixture
def batch(rng):
    return rng.normal(size=(4, 3, 32, 32)).astype(np.float32)


def test_double_flip_is_identity(batch, rng):
    centre = np.full((4, 2), data.AUG_PAD)
    once = data.augment(batch, rng, offsets=centre, flips=np.ones(4, bool))
    twice = data.augment(once, rng, offsets=centre, flips=np.ones(4, bool))
    np.testing.assert_array_equal(twice, batch)
    np.testing.assert_array_equal(once, batch[..., ::-1])


def test_centre_crop_is_identity(batch, rng):
    out = data.augment(batch, rng, offsets=np.full((4, 2), 4), flips=np.zeros(4, bool))
    np.testing.assert_array_equal(out, batch)


def test_corner_crop_pads_with_fill(batch, rng):
    out = data.augment(batch, rng, fill=-2.5, offsets=np.zeros((4, 2), int), flips=np.zeros(4, bool))
    assert np.all(out[:, :, :4, :] == -2.5) and np.all(out[:, :, :, :4] == -2.5)
    np.testing.assert_array_equal(out[:, :, 4:, 4:], batch[:, :, :28, :28])


def test_same_seed_same_batch(batch):
    a = data.augment(batch, np.random.default_rng(5))
    b = data.augment(batch, np.random.default_rng(5))
    assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8), st.booleans())
def test_augment_preserves_shape_and_values(dy, dx, flip):
    x = np.arange(2 * 3 * 32 * 32, dtype=np.float32).reshape(2, 3, 32, 32)
    out = data.augment(x, None, fill=-1.0, offsets=np.array([[dy, dx]] * 2), flips=np.array([flip] * 2))
    assert out.shape == x.shape
    kept = out[out >= 0]
    assert set(kept.tolist()) <= set(x.ravel().tolist())


def test_batch_indices_cover_and_drop_singleton():
    batches = data.batch_indices(129, 64)
    assert [len(b) for b in batches] == [64, 64]
    batches = data.batch_indices(130, 64, np.random.default_rng(0))
    assert sorted(np.concatenate(batches).tolist()) == list(range(130))


def test_constant_channel_standardizes_to_zero(one_record_dir):
    train, _ = data.load_cifar10(one_record_dir)
    np.testing.assert_array_equal(train.images, 0.0)
