#!/usr/bin/env python3
"""Export the scikit-learn handwritten digits (classes 3 and 8) as idx files.

Writes MNIST-style idx3/idx1 buffers with an 80/20 train/test split so the
C++ loaders and the 3-vs-8 experiments run without any network access.
"""
import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "digits38")
    out.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    mask = (digits.target == 3) | (digits.target == 8)
    # pixel range is 0..16; rescale to 0..255 so the idx loader's /255 applies
    images = np.round(digits.images[mask] * 255.0 / 16.0).astype(np.uint8)
    labels = digits.target[mask].astype(np.uint8)

    rng = np.random.RandomState(0)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = int(0.8 * len(labels))

    write_idx_images(out / "train-images-idx3-ubyte", images[:n_train])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[:n_train])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[n_train:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[n_train:])
    print(f"wrote {n_train} train / {len(labels) - n_train} test digits to {out}")


if __name__ == "__main__":
    main()
