"""Checkpoint files: a JSON manifest followed by a raw little-endian payload.

Layout::

    b"PSYCKPT1" | header length (uint64, little-endian) | header (UTF-8 JSON) | payload

The header lists every tensor as ``{name, dtype, shape, offset, nbytes}``
with offsets relative to the payload start, plus the model config, epoch,
step, RNG state and optimizer hyperparameters. Tensors are stored
contiguously in manifest order.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

MAGIC = b"PSYCKPT1"
FORMAT_VERSION = 1
_ALLOWED_DTYPES = {"<f4", "<f8", "<i8"}


class CheckpointError(ValueError):
    """Malformed checkpoint, or one that does not match the model it is loaded into."""


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    config: Optional[dict] = None
    epoch: int = 0
    step: int = 0
    rng_state: Optional[dict] = None
    optimizer: Optional[dict] = None
    extra: dict = field(default_factory=dict)


def _le_dtype(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<").str
    if dt not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return dt


def encode(ckpt: Checkpoint) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        dt = _le_dtype(arr)
        data = np.ascontiguousarray(arr, dtype=dt).tobytes()
        manifest.append({"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": FORMAT_VERSION,
        "tensors": manifest,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "optimizer": ckpt.optimizer,
        "extra": ckpt.extra,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def decode(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from None
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format {header.get('format')!r}")
    payload = memoryview(raw)[start + hlen:]
    tensors, spans = {}, []
    for entry in header["tensors"]:
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise CheckpointError(f"{source}: tensor {entry['name']!r} has dtype {entry['dtype']}")
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if count * dt.itemsize != entry["nbytes"]:
            raise CheckpointError(f"{source}: tensor {entry['name']!r} size does not match its shape")
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{source}: tensor {entry['name']!r} extends past the payload")
        spans.append((lo, hi, entry["name"]))
        arr = np.frombuffer(payload[lo:hi], dtype=dt).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    spans.sort()
    for (lo1, hi1, a), (lo2, _, b) in zip(spans, spans[1:]):
        if lo2 < hi1:
            raise CheckpointError(f"{source}: tensors {a!r} and {b!r} overlap")
    return Checkpoint(tensors=tensors, config=header["config"], epoch=header["epoch"], step=header["step"],
                      rng_state=header["rng_state"], optimizer=header["optimizer"], extra=header.get("extra", {}))


def write(path, ckpt: Checkpoint) -> None:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)


def read(path) -> Checkpoint:
    path = Path(path)
    return decode(path.read_bytes(), str(path))


def snapshot(model, optimizer=None, epoch: int = 0, step: int = 0, rng: Optional[np.random.Generator] = None,
             extra: Optional[dict] = None) -> Checkpoint:
    tensors = dict(model.state_dict())
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    return Checkpoint(
        tensors=tensors,
        config=model.config.to_dict(),
        epoch=epoch,
        step=step,
        rng_state=rng.bit_generator.state if rng is not None else None,
        optimizer=optimizer.hyperparams() if optimizer is not None else None,
        extra=extra or {},
    )


def save(path, model, optimizer=None, epoch: int = 0, step: int = 0, rng=None, extra=None) -> None:
    write(path, snapshot(model, optimizer, epoch, step, rng, extra))


def restore(ckpt: Checkpoint, model, optimizer=None, rng: Optional[np.random.Generator] = None) -> None:
    """Load tensors into ``model`` (and ``optimizer``/``rng``), checking the config and manifest first."""
    if ckpt.config is not None and ckpt.config != model.config.to_dict():
        raise CheckpointError("checkpoint config does not match the model config")
    own = model.state_dict()
    if optimizer is not None:
        own = {**own, **optimizer.state_tensors()}
    stored = {k: v for k, v in ckpt.tensors.items() if optimizer is not None or not k.startswith("optim.")}
    missing = sorted(set(own) - set(stored))
    unexpected = sorted(set(stored) - set(own))
    shape = sorted(k for k in set(own) & set(stored) if np.shape(own[k]) != np.shape(stored[k]))
    if missing or unexpected or shape:
        raise CheckpointError(f"manifest mismatch: missing={missing} unexpected={unexpected} shape={shape}")
    model.load_state_dict({k: v for k, v in stored.items() if not k.startswith("optim.")})
    if optimizer is not None:
        if ckpt.optimizer is None:
            raise CheckpointError("checkpoint has no optimizer state")
        optimizer.load_state(ckpt.optimizer, stored)
    if rng is not None and ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
