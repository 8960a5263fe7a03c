#!/usr/bin/env python3
"""Build the bundled MNIST subset in IDX format.

Source: the 5,000-image MNIST sample shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per digit). The rows are
shuffled with a fixed seed and split 4,000 train / 1,000 test, then written
as gzipped IDX files named like the standard MNIST distribution.

    pip download --no-deps mlxtend -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist
"""
import gzip
import random
import struct
import sys
import zipfile
from pathlib import Path


def main():
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    text = gzip.decompress(
        zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = []
    for line in text.strip().split("\n"):
        cells = [int(float(c)) for c in line.split(",")]
        rows.append((bytes(cells[:-1]), cells[-1]))
    random.Random(20200101).shuffle(rows)
    splits = {"train": rows[:4000], "t10k": rows[4000:]}
    for name, part in splits.items():
        images = struct.pack(">IIII", 2051, len(part), 28, 28) + b"".join(r[0] for r in part)
        labels = struct.pack(">II", 2049, len(part)) + bytes(r[1] for r in part)
        for suffix, payload in (("images-idx3-ubyte", images), ("labels-idx1-ubyte", labels)):
            with open(out / f"{name}-{suffix}.gz", "wb") as raw:
                with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
                    f.write(payload)


if __name__ == "__main__":
    main()
