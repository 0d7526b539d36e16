#!/usr/bin/env python3
"""Prepare MNIST IDX files under data/mnist/.

Sources, tried in order:
  1. files already present        -> leave them alone
  2. ~/.keras/datasets/mnist.npz  -> canonical 60k/10k split
  3. the npm 'mnist' package      -> real 10,000-digit MNIST subset shipped
                                     as JSON; split 70/30 per class

The npm package stores pixels as round(p/255, 3); round(v*255) recovers the
original bytes exactly. The 70/30 split is deterministic (seeded shuffle per
class), so every checkout produces identical files.
"""

import argparse
import json
import random
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def write_idx(path: Path, dims, payload: bytes) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, 8, len(dims)))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def write_split(out: Path, name: str, images: list[bytes], labels: list[int]) -> None:
    prefix = "train" if name == "train" else "t10k"
    write_idx(out / f"{prefix}-images-idx3-ubyte", [len(images), 28, 28], b"".join(images))
    write_idx(out / f"{prefix}-labels-idx1-ubyte", [len(labels)], bytes(labels))


def from_keras_cache(out: Path) -> bool:
    npz = Path.home() / ".keras" / "datasets" / "mnist.npz"
    if not npz.exists():
        return False
    import numpy as np

    with np.load(npz) as d:
        for split, xs, ys in (("train", d["x_train"], d["y_train"]),
                              ("test", d["x_test"], d["y_test"])):
            imgs = [xs[i].astype(np.uint8).tobytes() for i in range(len(xs))]
            write_split(out, split, imgs, [int(y) for y in ys])
    (out / "SOURCE.txt").write_text("canonical MNIST via keras cache (60000/10000)\n")
    return True


def from_npm(out: Path) -> bool:
    try:
        with tempfile.TemporaryDirectory() as td:
            subprocess.run(
                ["npm", "pack", "mnist@1.1.0", "--pack-destination", td],
                check=True, capture_output=True, text=True)
            tgz = next(Path(td).glob("*.tgz"))
            with tarfile.open(tgz) as tar:
                tar.extractall(td)
            digits = Path(td) / "package" / "src" / "digits"
            train_imgs, train_labels, test_imgs, test_labels = [], [], [], []
            for c in range(10):
                flat = json.loads((digits / f"{c}.json").read_text())["data"]
                n = len(flat) // 784
                imgs = [bytes(round(v * 255) for v in flat[i * 784:(i + 1) * 784])
                        for i in range(n)]
                random.Random(c).shuffle(imgs)
                cut = (n * 7) // 10
                train_imgs += imgs[:cut]
                train_labels += [c] * cut
                test_imgs += imgs[cut:]
                test_labels += [c] * (n - cut)
            write_split(out, "train", train_imgs, train_labels)
            write_split(out, "test", test_imgs, test_labels)
            (out / "SOURCE.txt").write_text(
                "10k-digit MNIST subset from the npm 'mnist' package (1.1.0),\n"
                "deterministic 70/30 per-class train/test split\n"
                f"({len(train_imgs)} train / {len(test_imgs)} test)\n")
            return True
    except (subprocess.CalledProcessError, FileNotFoundError, StopIteration) as e:
        print(f"npm route failed: {e}", file=sys.stderr)
        return False


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "mnist"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if all((out / f).exists() for f in FILES):
        print(f"already present in {out}")
        return 0
    if from_keras_cache(out):
        print(f"wrote canonical MNIST to {out}")
        return 0
    if from_npm(out):
        print(f"wrote the npm-packaged MNIST subset to {out}")
        return 0
    print("no MNIST source available: place canonical IDX files in data/mnist/ "
          "or install npm", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
