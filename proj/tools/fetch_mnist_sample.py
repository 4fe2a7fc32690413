#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the sample bundled with mlxtend.

The mlxtend wheel ships 5000 MNIST training images (500 per class) as a CSV.
This script downloads the wheel with pip, shuffles the rows with a fixed seed
and writes gzipped IDX files:

    <out>/train-images-idx3-ubyte.gz   (4000 images)
    <out>/train-labels-idx1-ubyte.gz
    <out>/t10k-images-idx3-ubyte.gz    (1000 images)
    <out>/t10k-labels-idx1-ubyte.gz

Use the official MNIST files instead whenever they are available; the loader
reads either.
"""

import argparse
import gzip
import random
import struct
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx_images(path, rows):
    header = struct.pack(">IIII", 0x00000803, len(rows), 28, 28)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        for pixels, _ in rows:
            f.write(bytes(pixels))


def write_idx_labels(path, rows):
    header = struct.pack(">II", 0x00000801, len(rows))
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        f.write(bytes(label for _, label in rows))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--n-test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=2021)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "mlxtend==0.24.0", "-d", tmp],
            check=True)
        wheel = next(Path(tmp).glob("mlxtend-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            text = gzip.decompress(z.read(CSV_MEMBER)).decode()

    rows = []
    for line in text.strip().splitlines():
        values = [int(float(v)) for v in line.split(",")]
        rows.append((values[:-1], values[-1]))

    random.Random(args.seed).shuffle(rows)
    test, train = rows[:args.n_test], rows[args.n_test:]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte.gz", train)
    write_idx_labels(out / "train-labels-idx1-ubyte.gz", train)
    write_idx_images(out / "t10k-images-idx3-ubyte.gz", test)
    write_idx_labels(out / "t10k-labels-idx1-ubyte.gz", test)
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
