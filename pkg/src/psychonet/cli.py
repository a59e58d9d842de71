"""Command-line entry point: ``psychonet <subcommand> [flags]``.

Results go to stdout as JSON; diagnostics go to stderr. Exit codes: 0 on
success, 1 on invalid input (bad flags, config, recipe, dataset or
checkpoint), 2 on failures while running.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, data, selftest
from . import autograd as ag
from .checkpoint import CheckpointError
from .models import ConfigError, build, count_layers, count_params, resolve_config
from .train import Recipe, RecipeError, evaluate, load_model, train


class UsageError(Exception):
    pass


VALIDATION_ERRORS = (UsageError, ConfigError, RecipeError, data.DatasetError, CheckpointError,
                     FileNotFoundError, IndexError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_config(text: str):
    """A preset name, a path to a JSON file, or inline JSON."""
    path = Path(text)
    if path.suffix == ".json" or path.is_file():
        if not path.is_file():
            raise UsageError(f"config file {text} not found")
        text = path.read_text()
    return resolve_config(text)


def _prepare_out(path, force: bool, allow_existing: bool = False) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not (force or allow_existing):
        raise UsageError(f"output directory {out} is not empty; pass --force to write into it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_mask(text: str):
    if text in ("all", "none"):
        return text
    parts = text.split(":")
    try:
        if parts[0] == "band" and len(parts) == 2:
            return ("band", int(parts[1]))
        if parts[0] == "channel" and len(parts) == 3:
            return ("channel", int(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise UsageError(f"bad --mask {text!r}; use all, none, band:<i> or channel:<branch>:<c>")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_count(args) -> int:
    text = args.config or args.preset
    if text is None:
        raise UsageError("count: give a config (positional or --config)")
    model = build(_load_config(text))
    overall, complex_ = count_layers(model)
    _emit({"name": model.config.name, "params": count_params(model),
           "layers": {"overall": overall, "complex": complex_}})
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    recipe = Recipe.load(args.recipe) if args.recipe else Recipe()
    if args.seed is not None:
        recipe.seed = args.seed
    if args.epochs is not None:
        recipe.epochs = args.epochs
    recipe.validate()
    out = _prepare_out(args.out, args.force, allow_existing=args.resume)
    if args.force and not args.resume:
        for stale in list(out.glob("epoch_*.ckpt")) + [out / "best.ckpt", out / "metrics.jsonl"]:
            stale.unlink(missing_ok=True)
    train_set, test_set = data.load_cifar10(args.data_dir)
    final = train(config, recipe, out, train_set, test_set, resume=args.resume, log=_log)
    _emit(final)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    train_set, test_set = data.load_cifar10(args.data_dir)
    ds = (train_set if args.split == "train" else test_set).subset(args.subset)
    acc = evaluate(model, ds, args.batch_size)
    _emit({"checkpoint": str(args.checkpoint), "split": args.split, "n": len(ds), "top1": acc})
    return 0


def cmd_viz_filters(args) -> int:
    model = load_model(args.checkpoint)
    out = _prepare_out(args.out, args.force)
    n = len(model.dvc.bands) if model.dvc is not None else 0
    branches = range(n) if args.branch is None else [args.branch]
    written = []
    for b in branches:
        pca = analysis.filter_pca(analysis.filter_bank(model, b), args.k)
        for i, img in enumerate(pca.images):
            path = out / f"filters_branch{b}_pc{i}.pgm"
            analysis.write_pgm(path, img)
            written.append({"branch": b, "component": i, "eigenvalue": float(pca.eigenvalues[i]), "path": str(path)})
    _emit({"images": written})
    return 0


def cmd_viz_cam(args) -> int:
    model = load_model(args.checkpoint)
    out = _prepare_out(args.out, args.force)
    _, test_set = data.load_cifar10(args.data_dir)
    if not 0 <= args.index < len(test_set):
        raise UsageError(f"--index {args.index} out of range (test split has {len(test_set)})")
    image = test_set.images[args.index]
    label = int(test_set.labels[args.index]) if args.label is None else args.label
    if args.method == "hirescam":
        sal = analysis.hirescam_masked(model, image, label, args.layer, _parse_mask(args.mask))
    else:
        model.eval()
        with ag.no_grad():
            model(ag.Tensor(image[None]))
        if not -len(model.layers) <= args.layer < len(model.layers):
            raise UsageError(f"--layer {args.layer} out of range")
        sal = analysis.kpca_cam(model.activations[args.layer], args.component, args.kernel, part=args.part,
                                layer=f"layers.{args.layer}")
    path = out / f"cam_{args.method}_img{args.index}.pgm"
    analysis.write_pgm(path, sal.values)
    _emit({"path": str(path), "label": label, "layer": sal.layer, "condition": sal.condition,
           "shape": list(sal.values.shape)})
    return 0


def cmd_project(args) -> int:
    model = load_model(args.checkpoint)
    out = _prepare_out(args.out, args.force)
    _, test_set = data.load_cifar10(args.data_dir)
    ds = test_set.subset(args.n)
    feats = analysis.extract_features(model, ds.images, layer=args.layer)
    coords, var = analysis.feature_projection(feats)
    path = out / "projection.csv"
    analysis.write_coordinates(path, coords, ds.labels)
    _emit({"path": str(path), "n": len(ds), "explained_variance": var.tolist()})
    return 0


def cmd_selftest(args) -> int:
    def report(c):
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<40} {c.value:.3e}  (tol {c.tol:g})", file=sys.stderr)

    results = selftest.run(report)
    _emit({"checks": [{"name": c.name, "value": c.value, "tol": c.tol, "passed": c.passed} for c in results],
           "passed": all(c.passed for c in results)})
    return 0 if all(c.passed for c in results) else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    common.add_argument("--float64", action="store_true", help="run in 64-bit precision")
    data_arg = argparse.ArgumentParser(add_help=False)
    data_arg.add_argument("--data-dir", help=f"CIFAR-10 binary directory (default ${data.ENV_DIR})")
    out_arg = argparse.ArgumentParser(add_help=False)
    out_arg.add_argument("--out", required=True, help="output directory")
    out_arg.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    ckpt_arg = argparse.ArgumentParser(add_help=False)
    ckpt_arg.add_argument("--checkpoint", required=True)

    p = _Parser(prog="psychonet", description="Complex-valued frequency-coding networks on numpy.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("count", parents=[common], help="parameter and layer counts")
    s.add_argument("preset", nargs="?", help="preset name, JSON file or inline JSON")
    s.add_argument("--config")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("train", parents=[common, data_arg, out_arg], help="train a model")
    s.add_argument("--config", required=True)
    s.add_argument("--recipe", help="recipe JSON file (defaults to the built-in recipe)")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common, data_arg, ckpt_arg], help="top-1 accuracy of a checkpoint")
    s.add_argument("--split", choices=["train", "test"], default="test")
    s.add_argument("--subset", type=int, help="evaluate the first N images only")
    s.add_argument("--batch-size", type=int, default=250)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("viz-filters", parents=[common, out_arg, ckpt_arg], help="PCA images of DVC filters")
    s.add_argument("--branch", type=int, help="sub-band branch (default: all)")
    s.add_argument("--k", type=int, default=3, help="number of components")
    s.set_defaults(func=cmd_viz_filters)

    s = sub.add_parser("viz-cam", parents=[common, data_arg, out_arg, ckpt_arg], help="salience map for a test image")
    s.add_argument("--index", type=int, default=0, help="test-split image index")
    s.add_argument("--label", type=int, help="class to explain (default: the true label)")
    s.add_argument("--layer", type=int, default=-1, help="layer index (Phasor block output)")
    s.add_argument("--method", choices=["hirescam", "kpca"], default="hirescam")
    s.add_argument("--mask", default="all", help="all | none | band:<i> | channel:<branch>:<c>")
    s.add_argument("--component", type=int, default=0, help="kernel principal component (kpca)")
    s.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    s.add_argument("--part", choices=["re", "im"], default="re", help="complex component (kpca)")
    s.set_defaults(func=cmd_viz_cam)

    s = sub.add_parser("project", parents=[common, data_arg, out_arg, ckpt_arg], help="2D PCA of pooled features")
    s.add_argument("--n", type=int, default=500, help="number of test images")
    s.add_argument("--layer", type=int, help="pool this layer's output instead of the DVC output")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("selftest", parents=[common], help="numerical oracle and gradient checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        _log("error: --threads must be >= 1")
        return 1
    dtype = np.float64 if args.float64 else np.float32
    try:
        with threadpool_limits(limits=args.threads), ag.precision(dtype):
            return args.func(args)
    except VALIDATION_ERRORS as exc:
        _log(f"error: {exc}")
        return 1
    except KeyboardInterrupt:
        _log("interrupted")
        return 2
    except Exception as exc:  # runtime failure: report, never a traceback on stdout
        _log(f"error: {type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
