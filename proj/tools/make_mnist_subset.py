#!/usr/bin/env python3
"""Build the bundled 5,000-image MNIST subset as gzip IDX files.

The images come from the `mnist_5k.csv.gz` table shipped inside the
mlxtend wheel (500 training-set digits per class, 28x28, 0-255).

    python3 tools/make_mnist_subset.py --out data/mnist-5k

Pass --wheel to reuse an already downloaded wheel; otherwise pip fetches it.
"""

import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import tempfile
import zipfile


def fetch_wheel(dest):
    subprocess.check_call(
        ["pip", "download", "--no-deps", "-d", dest, "mlxtend==0.24.0"])
    return glob.glob(os.path.join(dest, "mlxtend-*.whl"))[0]


def read_rows(wheel):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    images, labels = [], []
    for line in io.StringIO(raw.decode("ascii")):
        values = [int(float(x)) for x in line.strip().split(",")]
        if not values:
            continue
        images.append(bytes(values[:-1]))
        labels.append(values[-1])
    return images, labels


def write_idx(out_dir, images, labels):
    os.makedirs(out_dir, exist_ok=True)
    n = len(images)
    with gzip.GzipFile(os.path.join(out_dir, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            assert len(img) == 784
            f.write(img)
    with gzip.GzipFile(os.path.join(out_dir, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/mnist-5k")
    parser.add_argument("--wheel")
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        images, labels = read_rows(wheel)
    write_idx(args.out, images, labels)
    print(f"wrote {len(images)} images to {args.out}")


if __name__ == "__main__":
    main()
