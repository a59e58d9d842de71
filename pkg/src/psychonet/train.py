"""Training recipe, train/eval loops, metrics log and resumable checkpoints."""
from __future__ import annotations

import dataclasses
import json
import math
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from .autograd import Tensor
from .data import Dataset, augment, batch_indices
from .models import Model, resolve_config
from .optim import AdamW, onecycle_lr

METRICS_FILE = "metrics.jsonl"
BEST_FILE = "best.ckpt"


class RecipeError(ValueError):
    pass


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or gradient)."""


@dataclass
class Recipe:
    epochs: int = 35
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.05
    seed: int = 42
    warmup_frac: float = 0.3
    div_start: float = 25.0
    div_final: float = 1e4
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    augment: bool = True
    eval_batch_size: int = 250

    @classmethod
    def from_dict(cls, d: dict) -> "Recipe":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise RecipeError(f"recipe: unknown keys {sorted(unknown)}")
        r = cls(**d)
        r.validate()
        return r

    @classmethod
    def from_json(cls, text: str) -> "Recipe":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RecipeError(f"recipe: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise RecipeError("recipe: expected a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "Recipe":
        return cls.from_json(Path(path).read_text())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2 or self.eval_batch_size < 1:
            raise RecipeError("recipe: epochs >= 1, batch_size >= 2 and eval_batch_size >= 1 required")
        if not self.lr > 0 or self.weight_decay < 0:
            raise RecipeError("recipe: lr must be positive and weight_decay non-negative")
        if not 0 <= self.warmup_frac < 1:
            raise RecipeError("recipe: warmup_frac must lie in [0, 1)")


def evaluate(model: Model, dataset: Dataset, batch_size: int = 250) -> float:
    """Top-1 accuracy in eval mode (running batch-norm statistics)."""
    was_training = model.training
    model.eval()
    correct = 0
    try:
        with ag.no_grad():
            for idx in batch_indices(len(dataset), batch_size, min_size=1):
                logits = model(Tensor(dataset.images[idx]))
                correct += int(np.sum(np.argmax(logits.data, axis=1) == dataset.labels[idx]))
    finally:
        model.train(was_training)
    return correct / max(len(dataset), 1)


def train_step(model: Model, optim: AdamW, x: np.ndarray, y: np.ndarray, lr: float) -> float:
    model.train()
    loss = ag.cross_entropy(model(Tensor(x)), y)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingError(f"non-finite training loss {value}")
    optim.zero_grad()
    ag.backward(loss)
    try:
        optim.step(lr)
    except FloatingPointError as exc:
        raise TrainingError(str(exc)) from None
    return value


def frozen_batch_losses(model: Model, x: np.ndarray, y: np.ndarray, steps: int = 20, lr: float = 1e-3,
                        weight_decay: float = 0.05) -> List[float]:
    """Losses of repeated AdamW steps on a single fixed batch (constant lr, no augmentation)."""
    optim = AdamW(model.named_parameters(), lr=lr, weight_decay=weight_decay)
    return [train_step(model, optim, x, y, lr) for _ in range(steps)]


def total_steps(recipe: Recipe, n_train: int) -> int:
    return recipe.epochs * math.ceil(n_train / recipe.batch_size)


def _epoch_ckpt(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"epoch_{epoch:03d}.ckpt"


def latest_checkpoint(out_dir) -> Optional[Path]:
    found = sorted(Path(out_dir).glob("epoch_*.ckpt"))
    return found[-1] if found else None


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def train(config, recipe: Recipe, out_dir, train_set: Dataset, test_set: Dataset, resume: bool = False,
          stop_after: Optional[int] = None, log: Optional[Callable[[str], None]] = None) -> dict:
    """Run (or resume) training; returns the last metrics record.

    All randomness (initialization, shuffling, augmentation) flows from one
    generator seeded with ``recipe.seed``. A checkpoint is written after every
    epoch, plus ``best.ckpt`` for the best test accuracy so far. ``stop_after``
    ends the run early after that many epochs (used to test resumption).
    """
    log = log or (lambda msg: print(msg, file=sys.stderr))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = resolve_config(config)
    recipe.validate()
    train_set = train_set.subset(recipe.train_subset)
    test_set = test_set.subset(recipe.test_subset)

    rng = np.random.default_rng(recipe.seed)
    model = Model(config, seed=int(rng.integers(2 ** 63)))
    optim = AdamW(model.named_parameters(), lr=recipe.lr, weight_decay=recipe.weight_decay)
    n_steps = total_steps(recipe, len(train_set))
    start_epoch, step, best = 0, 0, -1.0
    metrics_path = out_dir / METRICS_FILE
    records: List[dict] = []

    if resume and latest_checkpoint(out_dir) is not None:
        path = latest_checkpoint(out_dir)
        state = ckpt_io.read(path)
        ckpt_io.restore(state, model, optim, rng)
        start_epoch, step = state.epoch, state.step
        best = state.extra.get("best_acc", -1.0)
        if metrics_path.exists():
            records = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
            records = [r for r in records if r["epoch"] <= start_epoch]
        log(f"resumed from {path} (epoch {start_epoch}, step {step})")
    metrics_path.write_text("".join(_json_line(r) + "\n" for r in records))

    last = records[-1] if records else None
    for epoch in range(start_epoch + 1, recipe.epochs + 1):
        if stop_after is not None and epoch > stop_after:
            break
        losses = []
        for idx in batch_indices(len(train_set), recipe.batch_size, rng):
            x = train_set.images[idx]
            if recipe.augment:
                x = augment(x, rng)
            lr = onecycle_lr(step, n_steps, recipe.lr, recipe.warmup_frac, recipe.div_start, recipe.div_final)
            try:
                losses.append(train_step(model, optim, x, train_set.labels[idx], lr))
            except TrainingError as exc:
                kept = latest_checkpoint(out_dir)
                raise TrainingError(f"epoch {epoch} step {step}: {exc}; last checkpoint kept: {kept}") from None
            step += 1
        acc = evaluate(model, test_set, recipe.eval_batch_size)
        last = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)), "test_acc": acc, "lr": lr}
        with metrics_path.open("a") as fh:
            fh.write(_json_line(last) + "\n")
        log(f"epoch {epoch}/{recipe.epochs} loss {last['train_loss']:.4f} acc {acc:.4f}")
        is_best = acc > best
        best = max(best, acc)
        path = _epoch_ckpt(out_dir, epoch)
        ckpt_io.save(path, model, optim, epoch, step, rng, extra={"best_acc": best, "recipe": recipe.to_dict()})
        if is_best:
            shutil.copyfile(path, out_dir / BEST_FILE)
    return last or {}


def load_model(path) -> Model:
    """Rebuild a model from a checkpoint's embedded config and load its weights."""
    state = ckpt_io.read(path)
    if state.config is None:
        raise ckpt_io.CheckpointError(f"{path}: checkpoint has no config")
    model = Model(resolve_config(state.config))
    ckpt_io.restore(state, model)
    return model
