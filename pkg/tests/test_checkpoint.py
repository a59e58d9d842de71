import json
import struct

import numpy as np
import pytest

from psychonet import checkpoint as ck
from psychonet.autograd import Tensor
from psychonet.checkpoint import Checkpoint, CheckpointError
from psychonet.models import build
from psychonet.optim import AdamW


@pytest.fixture
def trained(tiny_config, rng):
    """A tiny model and optimizer after one real step, so moments are non-zero."""
    from psychonet import autograd as ag
    model = build(tiny_config)
    opt = AdamW(model.named_parameters())
    loss = ag.cross_entropy(model(Tensor(rng.normal(size=(4, 3, 32, 32)).astype(np.float32))), [0, 1, 2, 3])
    ag.backward(loss)
    opt.step()
    opt.zero_grad()
    return model, opt


def test_save_load_save_is_byte_identical(tmp_path, trained, tiny_config):
    model, opt = trained
    rng = np.random.default_rng(9)
    a = tmp_path / "a.ckpt"
    ck.save(a, model, opt, epoch=3, step=17, rng=rng, extra={"best_acc": 0.5})
    model2 = build(tiny_config)
    opt2 = AdamW(model2.named_parameters())
    rng2 = np.random.default_rng(0)
    loaded = ck.read(a)
    ck.restore(loaded, model2, opt2, rng2)
    b = tmp_path / "b.ckpt"
    ck.save(b, model2, opt2, epoch=loaded.epoch, step=loaded.step, rng=rng2, extra=loaded.extra)
    assert a.read_bytes() == b.read_bytes()
    for (name, p), (_, q) in zip(model.named_parameters(), model2.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes(), name
    assert rng2.random() == rng.random()


def test_payload_is_little_endian_fp32(tmp_path, trained):
    model, _ = trained
    path = tmp_path / "m.ckpt"
    ck.save(path, model)
    raw = path.read_bytes()
    assert raw[:8] == ck.MAGIC
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    assert {e["dtype"] for e in header["tensors"]} == {"<f4"}
    entry = header["tensors"][0]
    payload = raw[16 + hlen:]
    arr = np.frombuffer(payload[entry["offset"]:entry["offset"] + entry["nbytes"]], "<f4")
    np.testing.assert_array_equal(arr.reshape(entry["shape"]), model.state_dict()[entry["name"]])
    assert sum(e["nbytes"] for e in header["tensors"]) == len(payload)


def test_config_mismatch_rejected(tmp_path, trained, tiny_config):
    model, _ = trained
    ck.save(tmp_path / "m.ckpt", model)
    tiny_config["dvc"]["d_filter"] = 3
    tiny_config["head"]["d_in"] = 6
    with pytest.raises(CheckpointError, match="config"):
        ck.restore(ck.read(tmp_path / "m.ckpt"), build(tiny_config))


def test_manifest_mismatch_names_tensors(trained):
    model, _ = trained
    ckpt = ck.snapshot(model)
    ckpt.config = None
    name = next(iter(ckpt.tensors))
    ckpt.tensors.pop(name)
    ckpt.tensors["ghost.weight"] = np.zeros(2, np.float32)
    with pytest.raises(CheckpointError) as exc:
        ck.restore(ckpt, model)
    assert name in str(exc.value) and "ghost.weight" in str(exc.value)


def test_shape_mismatch_names_tensor(trained):
    model, _ = trained
    ckpt = ck.snapshot(model)
    ckpt.tensors["head.linear.bias.re"] = np.zeros(3, np.float32)
    with pytest.raises(CheckpointError, match="head.linear.bias.re"):
        ck.restore(ckpt, model)


def test_missing_optimizer_state(trained):
    model, opt = trained
    with pytest.raises(CheckpointError, match="missing"):
        ck.restore(ck.snapshot(model), model, opt)


def test_bad_magic():
    with pytest.raises(CheckpointError, match="magic"):
        ck.decode(b"NOTACKPT" + b"\0" * 16)


def _forge(tensors_manifest, payload):
    header = json.dumps({"format": 1, "tensors": tensors_manifest, "config": None, "epoch": 0, "step": 0,
                         "rng_state": None, "optimizer": None, "extra": {}}).encode()
    return ck.MAGIC + struct.pack("<Q", len(header)) + header + payload


def test_overlapping_offsets_rejected():
    raw = _forge([{"name": "a", "dtype": "<f4", "shape": [2], "offset": 0, "nbytes": 8},
                  {"name": "b", "dtype": "<f4", "shape": [2], "offset": 4, "nbytes": 8}], bytes(12))
    with pytest.raises(CheckpointError, match="overlap"):
        ck.decode(raw)


def test_truncated_payload_rejected():
    raw = _forge([{"name": "a", "dtype": "<f4", "shape": [4], "offset": 0, "nbytes": 16}], bytes(8))
    with pytest.raises(CheckpointError, match="'a'"):
        ck.decode(raw)


def test_size_shape_disagreement_rejected():
    raw = _forge([{"name": "a", "dtype": "<f4", "shape": [3], "offset": 0, "nbytes": 8}], bytes(8))
    with pytest.raises(CheckpointError, match="shape"):
        ck.decode(raw)


def test_unsupported_dtype():
    with pytest.raises(CheckpointError, match="dtype"):
        ck.encode(Checkpoint(tensors={"x": np.zeros(2, np.int16)}))


def test_round_trip_mixed_dtypes():
    tensors = {"f": np.arange(3, dtype=np.float32), "d": np.linspace(0, 1, 4), "i": np.array([[1, -2]], np.int64)}
    out = ck.decode(ck.encode(Checkpoint(tensors=tensors, epoch=2)))
    for k, v in tensors.items():
        assert out.tensors[k].dtype == v.dtype
        np.testing.assert_array_equal(out.tensors[k], v)
    assert out.epoch == 2


def test_write_is_atomic(tmp_path):
    path = tmp_path / "x.ckpt"
    ck.write(path, Checkpoint(tensors={"a": np.ones(1, np.float32)}))
    assert [p.name for p in tmp_path.iterdir()] == ["x.ckpt"]
