"""Interpretability tools: filter PCA, KPCA-CAM, gradient-masked HiResCAM, feature projections, PGM output."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist, squareform

from . import autograd as ag
from .autograd import ComplexTensor, Tensor
from .blocks import HadamardBlock

UPSAMPLE = 4


@dataclass
class SalienceMap:
    values: np.ndarray  # (H, W) in [0, 1]
    layer: str
    condition: str = "none"
    raw: Optional[np.ndarray] = None


def normalize01(x: np.ndarray) -> np.ndarray:
    """Min-max scaling to [0, 1]; constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    span = hi - lo
    if not np.isfinite(span) or span <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.zeros_like(x)
    return (x - lo) / span


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude entry is positive."""
    i = np.argmax(np.abs(v))
    return -v if v.flat[i] < 0 else v


# ---------------------------------------------------------------------------
# filter PCA
# ---------------------------------------------------------------------------

@dataclass
class FilterPCA:
    components: np.ndarray  # (k, crop*crop), orthonormal rows
    eigenvalues: np.ndarray  # (k,)
    images: list  # k arrays of (UPSAMPLE*crop, UPSAMPLE*crop) in [0, 1]


def filter_bank(model, branch: int) -> np.ndarray:
    """Complex filter of one DVC branch as a (channels, crop, crop) array."""
    if getattr(model, "dvc", None) is None:
        raise ValueError("model has no DVC module")
    blocks = model.dvc.branches.blocks
    if not 0 <= branch < len(blocks):
        raise IndexError(f"branch {branch} out of range (model has {len(blocks)})")
    return blocks[branch].filter.numpy()


def filter_pca(bank: Union[np.ndarray, HadamardBlock], k: int, upsample: int = UPSAMPLE) -> FilterPCA:
    """Principal spatial components of the channel-wise filter magnitudes ``|W_i|``.

    Each channel's flattened magnitude map is one sample. With a single
    channel there is nothing to center and the normalized map itself is
    returned as the only component.
    """
    if isinstance(bank, HadamardBlock):
        bank = bank.filter.numpy()
    mag = np.abs(np.asarray(bank))
    if mag.ndim != 3 or mag.shape[1] != mag.shape[2]:
        raise ValueError(f"filter bank must be (channels, crop, crop), got {mag.shape}")
    d, c, _ = mag.shape
    if not 1 <= k <= d:
        raise ValueError(f"k={k} must lie in [1, {d}] (number of filter channels)")
    x = mag.reshape(d, -1)
    if d > 1:
        x = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    denom = max(d - 1, 1)
    comps = np.stack([_fix_sign(v) for v in vt[:k]])
    images = [normalize01(ndimage.zoom(v.reshape(c, c), upsample, order=1)) for v in comps]
    return FilterPCA(comps, s[:k] ** 2 / denom, images)


# ---------------------------------------------------------------------------
# KPCA-CAM
# ---------------------------------------------------------------------------

def _activation_array(acts, part: str = "re") -> np.ndarray:
    if isinstance(acts, ComplexTensor):
        acts = acts.re if part == "re" else acts.im
    if isinstance(acts, Tensor):
        acts = acts.data
    acts = np.asarray(acts)
    if np.iscomplexobj(acts):
        acts = acts.real if part == "re" else acts.imag
    if acts.ndim == 4 and acts.shape[0] == 1:
        acts = acts[0]
    if acts.ndim != 3:
        raise ValueError(f"activations must be (C, H, W), got {acts.shape}")
    return acts.astype(np.float64)


def kpca_projection(samples: np.ndarray, component: int = 0, kernel: str = "rbf",
                    gamma: Optional[float] = None) -> np.ndarray:
    """Projection of each sample (row) onto one kernel principal component.

    ``gamma`` defaults to ``1 / (n_features * median nonzero squared distance)``.
    Returns zeros when the samples carry no variance.
    """
    n, f = samples.shape
    if kernel == "rbf":
        d2 = squareform(pdist(samples, "sqeuclidean"))
        nz = d2[np.triu_indices(n, 1)]
        nz = nz[nz > 0]
        if nz.size == 0:
            return np.zeros(n)
        g = gamma if gamma is not None else 1.0 / (f * np.median(nz))
        k = np.exp(-g * d2)
    elif kernel == "linear":
        k = samples @ samples.T
    else:
        raise ValueError(f"unknown kernel {kernel!r} (use 'rbf' or 'linear')")
    h = np.eye(n) - 1.0 / n
    kc = h @ k @ h
    w, v = np.linalg.eigh((kc + kc.T) / 2)
    order = np.argsort(w)[::-1]
    if not 0 <= component < n:
        raise ValueError(f"component {component} out of range")
    lam = w[order[component]]
    if lam <= 1e-12 * max(1.0, w.max()):
        return np.zeros(n)
    return _fix_sign(v[:, order[component]] * np.sqrt(lam))


def kpca_cam(acts, component: int = 0, kernel: str = "rbf", gamma: Optional[float] = None,
             part: str = "re", layer: str = "") -> SalienceMap:
    """Salience from a kernel-PCA of the spatial positions of one layer's activations."""
    a = _activation_array(acts, part)
    c, h, w = a.shape
    proj = kpca_projection(a.reshape(c, -1).T, component, kernel, gamma)
    raw = proj.reshape(h, w)
    return SalienceMap(normalize01(raw), layer, f"kpca:{kernel}:{component}", raw)


# ---------------------------------------------------------------------------
# gradient-masked HiResCAM
# ---------------------------------------------------------------------------

Mask = Union[str, Tuple[str, int], Tuple[str, int, int]]


def _grad_masks(model, mask: Mask) -> Tuple[Optional[dict], str]:
    if mask == "all":
        return None, "all"
    if mask == "none":
        return {i: 0.0 for i in range(len(model.dvc.bands))}, "none"
    n_bands = len(model.dvc.bands)
    kind = mask[0] if isinstance(mask, tuple) else None
    if kind == "band" and len(mask) == 2:
        i = mask[1]
        if not 0 <= i < n_bands:
            raise IndexError(f"sub-band {i} out of range (model has {n_bands})")
        return {j: 0.0 for j in range(n_bands) if j != i}, f"band:{i}"
    if kind == "channel" and len(mask) == 3:
        b, ch = mask[1], mask[2]
        if not 0 <= b < n_bands:
            raise IndexError(f"sub-band {b} out of range (model has {n_bands})")
        d = model.dvc.d_filter
        if not 0 <= ch < d:
            raise IndexError(f"channel {ch} out of range (branch has {d})")
        masks = {j: 0.0 for j in range(n_bands) if j != b}
        masks[b] = np.eye(d)[ch]
        return masks, f"channel:{b}:{ch}"
    raise ValueError(f"unknown mask {mask!r}; use 'all', 'none', ('band', i) or ('channel', branch, c)")


def hirescam_raw(model, image, label: int, layer: int, mask: Mask = "all") -> np.ndarray:
    """Un-normalized HiResCAM map: ``sum_c grad_c * act_c`` over both complex components.

    Gradients of the pre-softmax magnitude logit for ``label`` are restricted
    to the selected sub-band (or single channel of one branch) by masking the
    gradient leaving every other Hadamard branch.
    """
    if getattr(model, "dvc", None) is None:
        raise ValueError("masked HiResCAM needs a model with a DVC module")
    n_layers = len(model.layers)
    if not -n_layers <= layer < n_layers:
        raise IndexError(f"layer {layer} out of range (model has {n_layers})")
    n_classes = model.config.head["n_classes"]
    if not 0 <= label < n_classes:
        raise IndexError(f"label {label} out of range")
    x = np.asarray(image.data if isinstance(image, Tensor) else image)
    if x.ndim == 3:
        x = x[None]
    masks, _ = _grad_masks(model, mask)
    was_training, old_masks = model.training, model.dvc.grad_masks
    model.eval()
    model.dvc.grad_masks = masks
    try:
        score = model(Tensor(x))[0, label]
        act = model.activations[layer]
        if not isinstance(act, ComplexTensor):
            raise ValueError(f"layer {layer} is not a complex (Phasor block) output")
        g_re, g_im = ag.grad(score, [act.re, act.im])
        raw = (g_re * act.re.data + g_im * act.im.data).sum(axis=1)[0]
    finally:
        model.dvc.grad_masks = old_masks
        model.train(was_training)
        model.zero_grad()
    return raw


def hirescam_masked(model, image, label: int, layer: int = -1, mask: Mask = "all") -> SalienceMap:
    raw = hirescam_raw(model, image, label, layer, mask)
    _, cond = _grad_masks(model, mask)
    return SalienceMap(normalize01(np.maximum(raw, 0.0)), f"layers.{layer}", cond, raw)


# ---------------------------------------------------------------------------
# feature projections
# ---------------------------------------------------------------------------

def _feature_matrix(features) -> np.ndarray:
    if isinstance(features, ComplexTensor):
        return np.concatenate([features.re.data, features.im.data], axis=1).reshape(features.shape[0], -1)
    f = np.asarray(features)
    if np.iscomplexobj(f):
        f = np.concatenate([f.real, f.imag], axis=1)
    return f.reshape(f.shape[0], -1).astype(np.float64)


def feature_projection(features, n_components: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """PCA of (re || im) features to ``n_components`` coordinates; also returns explained variances."""
    x = _feature_matrix(features)
    if x.shape[0] < 3:
        raise ValueError(f"need at least 3 samples, got {x.shape[0]}")
    x = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    k = min(n_components, vt.shape[0])
    axes = np.stack([_fix_sign(v) for v in vt[:k]])
    coords = x @ axes.T
    if k < n_components:
        coords = np.pad(coords, ((0, 0), (0, n_components - k)))
    var = np.zeros(n_components)
    var[:k] = s[:k] ** 2 / (x.shape[0] - 1)
    return coords, var


def extract_features(model, images: np.ndarray, batch_size: int = 100, layer: Optional[int] = None) -> np.ndarray:
    """Pooled complex features per image: the DVC output, or a layer's globally averaged output."""
    out = []
    was_training = model.training
    model.eval()
    try:
        with ag.no_grad():
            for i in range(0, len(images), batch_size):
                feats = model.features(Tensor(images[i:i + batch_size]))
                if layer is not None:
                    act = ag.as_complex(model.activations[layer])
                    feats = act.mean(axis=(2, 3))
                out.append(feats.numpy())
    finally:
        model.train(was_training)
    return np.concatenate(out)


def write_coordinates(path, coords: np.ndarray, labels: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for (x, y), lab in zip(coords[:, :2], labels):
            writer.writerow([repr(float(x)), repr(float(y)), int(lab)])


# ---------------------------------------------------------------------------
# PGM output
# ---------------------------------------------------------------------------

def quantize(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
        raise ValueError("map values must be finite and lie in [0, 1]")
    return np.floor(255 * v + 0.5).astype(np.uint8)


def encode_pgm(values: np.ndarray) -> bytes:
    px = quantize(values)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def write_pgm(path, values: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(values))


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM written by this tool")
    w, h = (int(t) for t in parts[1].split())
    px = np.frombuffer(parts[3], dtype=np.uint8)
    if px.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {px.size}")
    return px.reshape(h, w) / 255.0
