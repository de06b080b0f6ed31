#!/usr/bin/env python3
"""Write a 5k-sample MNIST subset as IDX files.

The subset ships inside the `mlxtend` wheel (mlxtend/data/data/mnist_5k.csv.gz,
500 images per class, rows = 784 pixels + label). Usage:

    pip download mlxtend --no-deps -d /tmp/whl
    python3 scripts/mnist_subset_to_idx.py /tmp/whl/mlxtend-*.whl data/mnist

Samples are shuffled with a fixed seed and split 4000 train / 1000 test.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    data = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    perm = np.random.default_rng(20221101).permutation(len(data))
    data = data[perm]
    images, labels = data[:, :784], data[:, 784]
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[:4000])
    write_labels(out / "train-labels-idx1-ubyte", labels[:4000])
    write_images(out / "t10k-images-idx3-ubyte", images[4000:])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[4000:])


if __name__ == "__main__":
    main()
