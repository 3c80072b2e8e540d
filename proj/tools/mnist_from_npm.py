#!/usr/bin/env python3
"""Rebuild MNIST IDX files from the digit JSON shipped in the npm `mnist` package.

The package stores 10000 digits as floats in [0,1] rounded to 3 decimals; rounding
v*255 recovers the original bytes. Digits are interleaved with a fixed permutation
so that any first-n subset is roughly class balanced.

usage: mnist_from_npm.py <package-dir> <out-dir>
"""
import gzip
import json
import pathlib
import random
import struct
import sys


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src = pathlib.Path(sys.argv[1]) / "src" / "digits"
    out = pathlib.Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(data) % 784:
            sys.exit(f"{digit}.json: length {len(data)} not a multiple of 784")
        for i in range(0, len(data), 784):
            pix = bytes(min(255, max(0, round(v * 255))) for v in data[i:i + 784])
            samples.append((pix, digit))

    random.Random(0).shuffle(samples)
    n = len(samples)
    with gzip.open(out / "images-idx3-ubyte.gz", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pix, _ in samples:
            f.write(pix)
    with gzip.open(out / "labels-idx1-ubyte.gz", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(lbl for _, lbl in samples))
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    main()
