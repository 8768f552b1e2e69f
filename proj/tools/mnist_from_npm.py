#!/usr/bin/env python3
"""Build gzipped IDX files from the digits bundled in the `mnist` npm package.

The npm package ships 10,000 real MNIST digits (already scaled to [0, 1]).
They are shuffled with a fixed seed and split into train/test IDX files with
the standard MNIST file names, so the loader can read them like the
original distribution.

    python3 tools/mnist_from_npm.py --out data/mnist [--test 2000]
"""
import argparse
import gzip
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

import numpy as np


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir,
                   check=True, stdout=subprocess.DEVNULL)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    return workdir / "package" / "src" / "digits"


def write_idx(path: pathlib.Path, array: np.ndarray) -> None:
    # IDX: 0x00 0x00 <dtype=0x08 ubyte> <ndim>, then big-endian u32 extents.
    header = struct.pack(">BBBB", 0, 0, 0x08, array.ndim)
    header += struct.pack(">" + "I" * array.ndim, *array.shape)
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header)
        f.write(array.astype(np.uint8).tobytes())


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--test", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        digits = fetch_package(pathlib.Path(tmp))
        images, labels = [], []
        for label in range(10):
            raw = np.asarray(json.loads((digits / f"{label}.json").read_text())["data"],
                             dtype=np.float64)
            block = raw.reshape(-1, 28, 28)
            images.append(np.rint(block * 255.0).clip(0, 255))
            labels.append(np.full(block.shape[0], label))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = len(labels) - args.test

    write_idx(out / "train-images-idx3-ubyte.gz", images[:n_train])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[:n_train])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[n_train:])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[n_train:])
    print(f"wrote {n_train} train / {args.test} test samples to {out}")


if __name__ == "__main__":
    main()
