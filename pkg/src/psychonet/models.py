"""Declarative model configs, presets, construction and counting conventions.

A config is a JSON document::

    {"name": "model-i", "input_size": 32, "in_channels": 3,
     "stem": {"kernel": 3, "stride": 1, "d_out": 64, "maxpool": false},
     "layers": [{"type": "phasor_i", "d_in": 64, "d_out": 256, "stride": 2}, ...],
     "dvc": {"sub_bands": [[8, 4], [4, 1]], "d_filter": 256,
             "sources": null, "compand_exponent": 0.8},
     "head": {"d_in": 512, "n_classes": 10}}

``sources`` optionally names, per sub-band, the layer index whose output
feeds that band (default: the last layer). ``dvc`` may be ``null``, in which
case the companded spectrum of the last layer is pooled straight into the head.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autograd as ag
from .autograd import ComplexTensor, Tensor
from .blocks import DVC, PhasorC, PhasorI, SimpleConvBlock, SubBandSpec, check_disjoint, spectrum_of
from .complex_nn import ComplexLinear, complex_avgpool_global
from .nn import BatchNorm2d, Conv2d, ConvBlock, DWConvBlock, Module, ModuleList
from .spectral import COMPAND_EXPONENT

LAYER_KEYS = {
    "resblock": {"d_in", "d_bottleneck", "d_out", "stride"},
    "conv_block": {"d_in", "d_out", "stride", "kernel"},
    "dwconv_block": {"d_in", "d_out", "stride"},
    "phasor_i": {"d_in", "d_out", "stride"},
    "phasor_c": {"d_in", "d_out", "stride", "n_conv"},
    "simple_conv_block": {"d_in", "d_out", "stride"},
}
LAYER_DEFAULTS = {"stride": 1, "kernel": 3, "n_conv": 2}
# which layers consume / produce complex features
COMPLEX_IN = {"phasor_c"}
COMPLEX_OUT = {"phasor_i", "phasor_c"}

TOP_KEYS = {"name", "input_size", "in_channels", "stem", "layers", "dvc", "head"}
STEM_KEYS = {"kernel", "stride", "d_out", "maxpool"}
DVC_KEYS = {"sub_bands", "d_filter", "sources", "compand_exponent"}
HEAD_KEYS = {"d_in", "n_classes"}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent model configs."""


def _check_keys(obj, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


@dataclass
class ModelConfig:
    name: str
    input_size: int
    stem: dict
    layers: List[dict]
    head: dict
    dvc: Optional[dict] = None
    in_channels: int = 3

    # -- (de)serialization ---------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        _check_keys(d, TOP_KEYS, {"name", "input_size", "stem", "layers", "head"}, "config")
        _check_keys(d["stem"], STEM_KEYS, {"kernel", "stride", "d_out"}, "stem")
        layers = []
        for i, layer in enumerate(d["layers"]):
            if not isinstance(layer, dict) or layer.get("type") not in LAYER_KEYS:
                raise ConfigError(f"layers[{i}]: unknown layer type {layer.get('type') if isinstance(layer, dict) else layer!r}")
            keys = LAYER_KEYS[layer["type"]]
            _check_keys(layer, keys | {"type"}, {"type", "d_in", "d_out"} | ({"d_bottleneck"} & keys), f"layers[{i}]")
            full = {k: LAYER_DEFAULTS[k] for k in keys if k in LAYER_DEFAULTS}
            full.update(layer)
            layers.append(full)
        dvc = d.get("dvc")
        if dvc is not None:
            _check_keys(dvc, DVC_KEYS, {"sub_bands", "d_filter"}, "dvc")
            dvc = {"sources": None, "compand_exponent": COMPAND_EXPONENT, **dvc}
            dvc["sub_bands"] = [list(b) for b in dvc["sub_bands"]]
        _check_keys(d["head"], HEAD_KEYS, HEAD_KEYS, "head")
        stem = {"maxpool": False, **d["stem"]}
        return cls(name=d["name"], input_size=int(d["input_size"]), stem=stem, layers=layers,
                   head=dict(d["head"]), dvc=dvc, in_channels=int(d.get("in_channels", 3)))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_size": self.input_size,
            "in_channels": self.in_channels,
            "stem": dict(self.stem),
            "layers": [dict(layer) for layer in self.layers],
            "dvc": copy.deepcopy(self.dvc),
            "head": dict(self.head),
        }

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # -- consistency ---------------------------------------------------------
    def bands(self) -> List[SubBandSpec]:
        if self.dvc is None:
            return []
        n = len(self.layers)
        sources = self.dvc["sources"] or [n - 1] * len(self.dvc["sub_bands"])
        if len(sources) != len(self.dvc["sub_bands"]):
            raise ConfigError("dvc: sources must list one layer index per sub-band")
        out = []
        for band, src in zip(self.dvc["sub_bands"], sources):
            if len(band) != 2:
                raise ConfigError(f"dvc: sub-band {band} must be [crop, drop]")
            src = src % n if -n <= src < n else None
            if src is None:
                raise ConfigError(f"dvc: source index out of range for {n} layers")
            out.append(SubBandSpec(int(band[0]), int(band[1]), src))
        return out

    def spatial_sizes(self) -> List[int]:
        """Feature resolution after every layer."""
        size = _out_size(self.input_size, self.stem["kernel"], self.stem["stride"])
        if self.stem.get("maxpool"):
            size = _out_size(size, 3, 2)
        sizes = []
        for layer in self.layers:
            size = _out_size(size, 3, layer.get("stride", 1))
            sizes.append(size)
        return sizes

    def validate(self) -> None:
        prev = self.stem["d_out"]
        is_complex = False
        for i, layer in enumerate(self.layers):
            if layer["d_in"] != prev:
                where = "stem" if i == 0 else f"layers[{i - 1}]"
                raise ConfigError(f"layers[{i}] d_in={layer['d_in']} does not match {where} d_out={prev}")
            if layer["type"] in COMPLEX_IN and not is_complex:
                raise ConfigError(f"layers[{i}] ({layer['type']}) needs complex input")
            if layer["type"] not in COMPLEX_IN and is_complex:
                raise ConfigError(f"layers[{i}] ({layer['type']}) needs real input but follows a complex layer")
            is_complex = layer["type"] in COMPLEX_OUT
            prev = layer["d_out"]
        if not self.layers:
            raise ConfigError("config needs at least one layer")
        sizes = self.spatial_sizes()
        if self.dvc is None:
            expected = prev
        else:
            bands = self.bands()
            by_src: Dict[int, list] = {}
            for b in bands:
                by_src.setdefault(b.source, []).append(b)
            for src, group in by_src.items():
                try:
                    check_disjoint(group, sizes[src])
                except ValueError as exc:
                    raise ConfigError(f"dvc: {exc}") from None
            expected = self.dvc["d_filter"] * len(bands)
        if self.head["d_in"] != expected:
            raise ConfigError(f"head d_in={self.head['d_in']} does not match feature dim {expected}")


def _out_size(size: int, k: int, s: int) -> int:
    return (size + 2 * (k // 2) - k) // s + 1


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class ResBlock(Module):
    """Bottleneck residual block: 1x1 reduce, 3x3 (stride), 1x1 expand, plus skip.

    Each conv is followed by BN and GELU; the sum is returned without a final
    activation. A 1x1 projection (conv + BN) is used when the shape changes.
    """

    def __init__(self, d_in: int, d_bottleneck: int, d_out: int, stride: int = 1, rng=None):
        super().__init__()
        self.reduce = ConvBlock(d_in, d_bottleneck, 1, rng=rng)
        self.spatial = ConvBlock(d_bottleneck, d_bottleneck, 3, stride, rng=rng)
        self.expand = ConvBlock(d_bottleneck, d_out, 1, rng=rng)
        if stride != 1 or d_in != d_out:
            self.proj = Conv2d(d_in, d_out, 1, stride, rng=rng)
            self.proj_bn = BatchNorm2d(d_out)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return self.expand(self.spatial(self.reduce(x))) + skip


class Stem(Module):
    def __init__(self, in_channels: int, d_out: int, kernel: int, stride: int, maxpool: bool, rng=None):
        super().__init__()
        self.block = ConvBlock(in_channels, d_out, kernel, stride, rng=rng)
        self.maxpool = maxpool

    def forward(self, x: Tensor) -> Tensor:
        y = self.block(x)
        return ag.maxpool2d(y, 3, 2, 1) if self.maxpool else y


class Head(Module):
    """Complex linear layer followed by the magnitude of each output."""

    def __init__(self, d_in: int, n_classes: int, rng=None):
        super().__init__()
        self.linear = ComplexLinear(d_in, n_classes, rng=rng)

    def forward(self, h: ComplexTensor) -> Tensor:
        return classify(h, self.linear)


def classify(h_pooled: ComplexTensor, linear: ComplexLinear) -> Tensor:
    """Real logits = |W h + b|."""
    return linear(h_pooled).magnitude()


def _make_layer(spec: dict, rng) -> Module:
    t = spec["type"]
    if t == "resblock":
        return ResBlock(spec["d_in"], spec["d_bottleneck"], spec["d_out"], spec["stride"], rng=rng)
    if t == "conv_block":
        return ConvBlock(spec["d_in"], spec["d_out"], spec["kernel"], spec["stride"], rng=rng)
    if t == "dwconv_block":
        return DWConvBlock(spec["d_in"], spec["d_out"], spec["stride"], rng=rng)
    if t == "phasor_i":
        return PhasorI(spec["d_in"], spec["d_out"], spec["stride"], rng=rng)
    if t == "phasor_c":
        return PhasorC(spec["d_in"], spec["d_out"], spec["stride"], spec["n_conv"], rng=rng)
    if t == "simple_conv_block":
        return SimpleConvBlock(spec["d_in"], spec["d_out"], spec["stride"], rng=rng)
    raise ConfigError(f"unknown layer type {t!r}")


class Model(Module):
    """A network built from a :class:`ModelConfig`.

    After each forward pass ``activations`` holds every layer's output, which
    the analysis tools read (and differentiate against).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        st = config.stem
        self.stem = Stem(config.in_channels, st["d_out"], st["kernel"], st["stride"], st.get("maxpool", False), rng=rng)
        self.layers = ModuleList(_make_layer(spec, rng) for spec in config.layers)
        if config.dvc is not None:
            bands = config.bands()
            d_ins = [config.layers[b.source]["d_out"] for b in bands]
            self.dvc = DVC(bands, d_ins, config.dvc["d_filter"], config.dvc["compand_exponent"], rng=rng)
        else:
            self.dvc = None
        self.head = Head(config.head["d_in"], config.head["n_classes"], rng=rng)
        self.activations: list = []

    def features(self, x) -> ComplexTensor:
        """Pooled complex features entering the head."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = self.stem(x)
        acts = []
        for layer in self.layers:
            h = layer(h)
            acts.append(h)
        self.activations = acts
        if self.dvc is not None:
            sources = {b.source for b in self.dvc.bands}
            return self.dvc({s: ag.as_complex(acts[s]) for s in sources})
        exponent = COMPAND_EXPONENT
        return complex_avgpool_global(spectrum_of(ag.as_complex(h), exponent).data)

    def forward(self, x) -> Tensor:
        return self.head(self.features(x))


def build(config) -> Model:
    """Instantiate a model from a config, a dict, a JSON string or a preset name."""
    return Model(resolve_config(config))


def resolve_config(config) -> ModelConfig:
    if isinstance(config, ModelConfig):
        return config
    if isinstance(config, dict):
        return ModelConfig.from_dict(config)
    if isinstance(config, str):
        if config in PRESETS:
            return preset(config)
        return ModelConfig.from_json(config)
    raise TypeError(f"cannot interpret {type(config).__name__} as a model config")


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def count_layers(model: Module) -> tuple:
    """(overall, complex) layer counts.

    Real convs, real linears, complex convs, complex linears and Hadamard
    filter blocks count as one layer each; complex layers are the complex
    convs and complex linears.
    """
    overall = complex_ = 0
    for m in model.modules():
        if m.layer_kind is not None:
            overall += 1
            complex_ += m.layer_kind == "complex"
    return overall, complex_


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _layer(t: str, d_in: int, d_out: int, stride: int = 1, **extra) -> dict:
    return {"type": t, "d_in": d_in, "d_out": d_out, "stride": stride, **extra}


def _chain(t: str, widths: List[int], d_in: int, strides: Dict[int, int] = None, **extra) -> List[dict]:
    strides = strides or {}
    out = []
    for i, w in enumerate(widths):
        out.append(_layer(t, d_in, w, strides.get(i, 1), **extra))
        d_in = w
    return out


def _resnet_stages(blocks: List[int]) -> List[dict]:
    """Leading bottleneck blocks of a ResNet: stage widths (64, 256) then (128, 512)."""
    stage_dims = [(64, 256), (128, 512)]
    out, d_in = [], 64
    for stage, n in enumerate(blocks):
        bott, d_out = stage_dims[stage]
        for i in range(n):
            stride = 2 if stage > 0 and i == 0 else 1
            out.append({"type": "resblock", "d_in": d_in, "d_bottleneck": bott, "d_out": d_out, "stride": stride})
            d_in = d_out
    return out


def _cifar(name: str, body: List[dict], with_dvc: bool) -> dict:
    last = body[-1]["d_out"]
    return {
        "name": name,
        "input_size": 32,
        "in_channels": 3,
        "stem": {"kernel": 3, "stride": 1, "d_out": 64, "maxpool": False},
        "layers": body,
        "dvc": {"sub_bands": [[8, 4], [4, 1]], "d_filter": 256} if with_dvc else None,
        "head": {"d_in": 512 if with_dvc else last, "n_classes": 10},
    }


def _imagenet(name: str, backbone: List[int], phasor: List[dict], bands, d_filter: int,
              sources=None) -> dict:
    return {
        "name": name,
        "input_size": 224,
        "in_channels": 3,
        "stem": {"kernel": 7, "stride": 2, "d_out": 64, "maxpool": True},
        "layers": _resnet_stages(backbone) + phasor,
        "dvc": {"sub_bands": bands, "d_filter": d_filter, "sources": sources},
        "head": {"d_in": d_filter * len(bands), "n_classes": 1000},
    }


def _phasor_stack(widths: List[int], strides: Dict[int, int], n_conv: int = 2, d_in: int = 512,
                  first_stride: int = 1) -> List[dict]:
    layers = [_layer("phasor_i", d_in, widths[0], first_stride)]
    layers += _chain("phasor_c", widths[1:], widths[0], {k - 1: v for k, v in strides.items()}, n_conv=n_conv)
    return layers


_PHASOR_I = [_layer("phasor_i", 64, 256, 2), _layer("phasor_c", 256, 256, 1, n_conv=2)]
_SIMPLE = _chain("simple_conv_block", [64, 64, 128, 192, 256], 64, {2: 2})
_BASE_BANDS = [[14, 8], [8, 4], [4, 1]]
_EFF_BANDS = [[14, 7], [7, 4], [4, 1]]


def _eff(name, backbone, widths, strides, first_stride, tap, d_filter):
    phasor = _phasor_stack(widths, strides, n_conv=1, first_stride=first_stride)
    n_back = sum(backbone)
    src = [n_back + tap, -1, -1]
    n = n_back + len(phasor)
    src = [s % n for s in src]
    return _imagenet(name, backbone, phasor, _EFF_BANDS, d_filter, src)


_PRESET_BUILDERS = {
    "model-i": lambda: _cifar("model-i", copy.deepcopy(_PHASOR_I), True),
    "model-ii": lambda: _cifar("model-ii", copy.deepcopy(_PHASOR_I), False),
    "model-iii": lambda: _cifar("model-iii", copy.deepcopy(_SIMPLE), True),
    "model-iv": lambda: _cifar("model-iv", copy.deepcopy(_SIMPLE), False),
    "psycho-s": lambda: _imagenet("psycho-s", [3, 4], _phasor_stack([256, 256, 384, 512, 512], {}, first_stride=2),
                                  _BASE_BANDS, 512),
    "psycho-b": lambda: _imagenet("psycho-b", [3, 4],
                                  _phasor_stack([256, 256, 256, 384, 384, 384, 512, 512, 512], {4: 2}),
                                  _BASE_BANDS, 512),
    "psycho-l": lambda: _imagenet("psycho-l", [3, 4], _phasor_stack([256] + [512] * 8, {4: 2}), _BASE_BANDS, 512),
    "psycho-h": lambda: _imagenet("psycho-h", [4, 3],
                                  _phasor_stack([256, 512, 512, 512, 512, 512, 512, 640, 1024], {4: 2}),
                                  _BASE_BANDS, 1024),
    "psycho-eff-s": lambda: _eff("psycho-eff-s", [3, 4], [256, 256, 512, 512, 512, 768], {3: 2}, 2, 2, 768),
    "psycho-eff-b": lambda: _eff("psycho-eff-b", [3, 4], [256, 512, 512, 512, 512, 768, 768, 768],
                                 {1: 2, 5: 2}, 1, 4, 768),
    "psycho-eff-l": lambda: _eff("psycho-eff-l", [3, 8], [256] + [512] * 7 + [1024, 1024],
                                 {1: 2, 8: 2}, 1, 7, 1024),
    "micro": lambda: {
        "name": "micro",
        "input_size": 8,
        "in_channels": 3,
        "stem": {"kernel": 3, "stride": 1, "d_out": 4, "maxpool": False},
        "layers": [_layer("phasor_i", 4, 4, 2), _layer("phasor_c", 4, 4, 1, n_conv=2)],
        "dvc": {"sub_bands": [[4, 2], [2, 1]], "d_filter": 3},
        "head": {"d_in": 6, "n_classes": 2},
    },
}
PRESETS = tuple(_PRESET_BUILDERS)

#: parameter counts and (overall, complex) layer counts reported for the presets
REPORTED = {
    "model-i": (2.366e6, (16, 5)),
    "model-iii": (2.360e6, (17, 1)),
    "psycho-s": (25.35e6, (65, 9)),
    "psycho-b": (42.01e6, (93, 13)),
    "psycho-l": (61.28e6, (93, 13)),
    "psycho-h": (88.61e6, (93, 13)),
    "psycho-eff-s": (25.35e6, (57, 9)),
    "psycho-eff-b": (45.82e6, (65, 11)),
    "psycho-eff-l": (62.03e6, (85, 13)),
}


def preset(name: str) -> ModelConfig:
    if name not in _PRESET_BUILDERS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return ModelConfig.from_dict(_PRESET_BUILDERS[name]())
