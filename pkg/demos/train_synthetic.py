"""Train a small network end to end on synthetic gratings stored in the CIFAR-10 binary layout.

The same commands work on the real dataset: point ``--data-dir`` (or
``PSYCHONET_CIFAR10_DIR``) at the extracted ``cifar-10-batches-bin``.

    python demos/train_synthetic.py [workdir]
"""
import json
import sys
import tempfile
from pathlib import Path

from psychonet import cli, data

CONFIG = {
    "name": "demo",
    "input_size": 32,
    "in_channels": 3,
    "stem": {"kernel": 3, "stride": 2, "d_out": 8},
    "layers": [
        {"type": "phasor_i", "d_in": 8, "d_out": 16, "stride": 2},
        {"type": "phasor_c", "d_in": 16, "d_out": 16},
    ],
    "dvc": {"sub_bands": [[8, 4], [4, 1]], "d_filter": 16},
    "head": {"d_in": 32, "n_classes": 10},
}
RECIPE = {"epochs": 3, "batch_size": 32, "lr": 3e-3, "train_subset": 1024, "test_subset": 256}


def step(*argv):
    print("$ psychonet", " ".join(argv), file=sys.stderr)
    code = cli.main(list(argv))
    if code:
        raise SystemExit(code)


def main(root):
    root = Path(root)
    dataset = data.write_synthetic_cifar10(root / "data", per_file=256, n_test=256, seed=0)
    (root / "demo.json").write_text(json.dumps(CONFIG))
    (root / "recipe.json").write_text(json.dumps(RECIPE))
    run = root / "run"
    step("count", "--config", str(root / "demo.json"))
    step("train", "--config", str(root / "demo.json"), "--recipe", str(root / "recipe.json"),
         "--data-dir", str(dataset), "--out", str(run), "--force")
    ckpt = str(run / "best.ckpt")
    step("eval", "--checkpoint", ckpt, "--data-dir", str(dataset), "--subset", "256")
    step("viz-filters", "--checkpoint", ckpt, "--out", str(root / "filters"), "--force", "--k", "2")
    for mask in ("all", "band:0", "band:1"):
        step("viz-cam", "--checkpoint", ckpt, "--data-dir", str(dataset), "--out", str(root / f"cam-{mask}"),
             "--force", "--mask", mask, "--index", "0")
    step("project", "--checkpoint", ckpt, "--data-dir", str(dataset), "--out", str(root / "proj"), "--force",
         "--n", "200")
    print(f"artifacts under {root}", file=sys.stderr)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="psychonet-demo-"))
