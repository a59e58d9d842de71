"""AdamW with decoupled weight decay and the one-cycle learning-rate schedule."""
from __future__ import annotations

import math
from typing import Dict, Iterable, Tuple

import numpy as np

from .autograd import Parameter


class AdamW:
    """``p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)`` with bias-corrected moments.

    Parameters are held by name; parameters whose ``grad`` is ``None`` are
    left untouched for that step.
    """

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.05):
        self.params: Dict[str, Parameter] = dict(named_params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float = None) -> None:
        lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - lr * self.weight_decay * p.data - lr * update).astype(p.data.dtype)

    def hyperparams(self) -> dict:
        return {"lr": self.lr, "betas": list(self.betas), "eps": self.eps,
                "weight_decay": self.weight_decay, "t": self.t}

    def state_tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"optim.m.{k}"] = self.m[k]
            out[f"optim.v.{k}"] = self.v[k]
        return out

    def load_state(self, hyper: dict, tensors: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_tensors())
        missing = sorted(expected - set(tensors))
        if missing:
            raise KeyError(f"optimizer state missing {missing}")
        self.t = int(hyper["t"])
        self.lr = float(hyper["lr"])
        self.betas = tuple(hyper["betas"])
        self.eps = float(hyper["eps"])
        self.weight_decay = float(hyper["weight_decay"])
        for k in self.params:
            self.m[k] = np.array(tensors[f"optim.m.{k}"], dtype=self.params[k].dtype)
            self.v[k] = np.array(tensors[f"optim.v.{k}"], dtype=self.params[k].dtype)


def onecycle_lr(step: int, total_steps: int, max_lr: float, warmup_frac: float = 0.3,
                div_start: float = 25.0, div_final: float = 1e4) -> float:
    """Cosine one-cycle schedule.

    Rises from ``max_lr/div_start`` to ``max_lr`` over the first
    ``warmup_frac * total_steps`` steps, then anneals to ``max_lr/div_final``
    at the final step.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    start, final = max_lr / div_start, max_lr / div_final
    peak = warmup_frac * total_steps
    if step <= peak:
        t = step / peak if peak > 0 else 1.0
        return max_lr - (max_lr - start) * (1 + math.cos(math.pi * t)) / 2
    span = (total_steps - 1) - peak
    t = (step - peak) / span if span > 0 else 1.0
    return final + (max_lr - final) * (1 + math.cos(math.pi * t)) / 2
