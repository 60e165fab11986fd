#!/usr/bin/env python3
"""Assemble a desk-scale MNIST subset in IDX format.

Sources (both are real MNIST digits and share no images):
  * npm package ``mnist@1.1.0`` -- ~10k digits stored as JSON floats in [0,1]
  * pip wheel ``mlxtend`` -- ``mnist_5k.csv.gz``, 500 digits per class

The pooled digits are shuffled with a fixed seed and split per class into
train / test, then written as the four standard IDX files that
``fgfp::data::load_mnist_idx`` reads.
"""

import argparse
import gzip
import io
import json
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile
from pathlib import Path

import numpy as np


def fetch(workdir: Path, npm_tgz: Path | None, wheel: Path | None):
    if npm_tgz is None:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                       stdout=subprocess.DEVNULL)
        npm_tgz = workdir / "mnist-1.1.0.tgz"
    if wheel is None:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                        "mlxtend==0.24.0", "-d", str(workdir)], check=True,
                       stdout=subprocess.DEVNULL)
        wheel = next(workdir.glob("mlxtend-*.whl"))
    return npm_tgz, wheel


def read_npm(tgz: Path):
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            blob = tar.extractfile(f"package/src/digits/{digit}.json").read()
            flat = np.asarray(json.loads(blob)["data"], dtype=np.float64)
            img = np.rint(flat.reshape(-1, 784) * 255.0).astype(np.uint8)
            images.append(img)
            labels.append(np.full(len(img), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def read_mlxtend(wheel: Path):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    return table[:, :784].astype(np.uint8), table[:, 784].astype(np.uint8)


def write_idx_images(path: Path, images: np.ndarray):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "mnist")
    ap.add_argument("--test-per-class", type=int, default=300)
    ap.add_argument("--seed", type=int, default=20250101)
    ap.add_argument("--npm-tgz", type=Path)
    ap.add_argument("--mlxtend-wheel", type=Path)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        npm_tgz, wheel = fetch(Path(tmp), args.npm_tgz, args.mlxtend_wheel)
        xa, ya = read_npm(npm_tgz)
        xb, yb = read_mlxtend(wheel)

    images = np.concatenate([xa, xb])
    labels = np.concatenate([ya, yb])
    rng = np.random.default_rng(args.seed)

    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        test_idx.append(idx[:args.test_per_class])
        train_idx.append(idx[args.test_per_class:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx_images(args.out / "train-images-idx3-ubyte", images[train_idx])
    write_idx_labels(args.out / "train-labels-idx1-ubyte", labels[train_idx])
    write_idx_images(args.out / "t10k-images-idx3-ubyte", images[test_idx])
    write_idx_labels(args.out / "t10k-labels-idx1-ubyte", labels[test_idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test digits to {args.out}")


if __name__ == "__main__":
    main()
