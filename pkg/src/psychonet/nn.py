"""Module containers and the real-valued layers (conv, batch norm, linear, GELU blocks)."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import autograd as ag
from .autograd import ComplexTensor, Parameter, Tensor


class Module:
    """Base class: parameters, buffers and sub-modules are discovered from attributes.

    Names are dot-separated attribute paths in definition order; complex
    parameters contribute ``<name>.re`` and ``<name>.im``.
    """

    _buffer_names: tuple = ()
    #: "real", "complex" or "filter" for modules that count as one layer
    layer_kind: Optional[str] = None

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for key, child in self.children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def modules(self) -> Iterator["Module"]:
        for _, m in self.named_modules():
            yield m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, value in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, ComplexTensor) and isinstance(value.re, Parameter):
                yield f"{name}.re", value.re
                yield f"{name}.im", value.im
            elif isinstance(value, Module):
                yield from value.named_parameters(name)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for key in self._buffer_names:
            yield (f"{prefix}.{key}" if prefix else key), getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}.{key}" if prefix else key)

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = sorted((set(own) | set(bufs)) - set(state))
        unexpected = sorted(set(state) - set(own) - set(bufs))
        bad_shape = sorted(
            n for n, v in state.items()
            if (n in own and own[n].shape != np.shape(v)) or (n in bufs and bufs[n].shape != np.shape(v))
        )
        if missing or unexpected or bad_shape:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected} shape={bad_shape}")
        for n, v in state.items():
            if n in own:
                own[n].data = np.array(v, dtype=own[n].dtype)
            else:
                bufs[n][...] = v


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def kaiming_normal(rng: np.random.Generator, shape: tuple, fan_in: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale * math.sqrt(2.0 / fan_in), size=shape)


def default_rng(rng) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


class Conv2d(Module):
    layer_kind = "real"

    def __init__(self, d_in: int, d_out: int, kernel: int, stride: int = 1, padding: Optional[int] = None,
                 groups: int = 1, bias: bool = False, rng=None):
        super().__init__()
        rng = default_rng(rng)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        fan_in = d_in // groups * kernel * kernel
        self.weight = Parameter(kaiming_normal(rng, (d_out, d_in // groups, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        dtype = ag.get_default_dtype()
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ag.batchnorm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class Linear(Module):
    layer_kind = "real"

    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None):
        super().__init__()
        rng = default_rng(rng)
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_out, d_in)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class ConvBlock(Module):
    """Conv -> BatchNorm -> GELU."""

    def __init__(self, d_in: int, d_out: int, kernel: int = 3, stride: int = 1, rng=None):
        super().__init__()
        self.conv = Conv2d(d_in, d_out, kernel, stride, rng=rng)
        self.bn = BatchNorm2d(d_out)

    def forward(self, x: Tensor) -> Tensor:
        return ag.gelu(self.bn(self.conv(x)))


class DWConvBlock(Module):
    """Depthwise 3x3 conv -> BN -> GELU -> 1x1 conv -> BN -> GELU.

    Spatial mixing happens only in the depthwise stage, channel mixing only in
    the pointwise stage.
    """

    def __init__(self, d_in: int, d_out: int, stride: int = 1, kernel: int = 3, rng=None):
        super().__init__()
        self.depthwise = Conv2d(d_in, d_in, kernel, stride, groups=d_in, rng=rng)
        self.bn1 = BatchNorm2d(d_in)
        self.pointwise = Conv2d(d_in, d_out, 1, rng=rng)
        self.bn2 = BatchNorm2d(d_out)

    def forward(self, x: Tensor) -> Tensor:
        x = ag.gelu(self.bn1(self.depthwise(x)))
        return ag.gelu(self.bn2(self.pointwise(x)))
