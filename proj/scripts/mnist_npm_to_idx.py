#!/usr/bin/env python3
"""Build the bundled 10k MNIST subset (IDX format) from the npm `mnist` package.

The npm package `mnist` (cazala/mnist) ships 10,000 real MNIST samples as
per-digit JSON arrays of 28x28 grayscale values in [0,1] (pixel byte / 255,
rounded to 3 decimals -- exactly byte-recoverable via round(v * 255)).

Usage:
    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist10k

Samples are interleaved with a fixed-seed shuffle so the emitted file is not
class-sorted. Output follows the canonical IDX layout: big-endian magic
0x00000803 / dims (N, 28, 28) for images, 0x00000801 / dims (N,) for labels.
"""

import json
import random
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    src = Path(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []  # (label, bytes)
    for digit in range(10):
        values = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(values) % 784 == 0
        for k in range(len(values) // 784):
            pixels = bytes(round(v * 255) for v in values[784 * k : 784 * (k + 1)])
            samples.append((digit, pixels))

    rng = random.Random(0)
    rng.shuffle(samples)
    n = len(samples)

    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">iiii", 0x00000803, n, 28, 28))
        for _, pixels in samples:
            f.write(pixels)
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">ii", 0x00000801, n))
        f.write(bytes(label for label, _ in samples))

    print(f"wrote {n} samples to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
