"""Write MNIST IDX files under $FEDSA_DATA_ROOT/mnist (default ~/.cache/fedsa/mnist).

If the four standard IDX files are already there nothing happens. Otherwise the
5,000-digit MNIST sample that ships inside the ``mlxtend`` wheel (500 per class)
is split 400/100 per class into train/test IDX files.

    pip install --no-deps mlxtend
    python scripts/fetch_mnist.py [--root DIR]
"""
import argparse

import numpy as np

from fedsa.data import data_root, write_idx_images, write_idx_labels

NAMES = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default=None)
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    out = data_root(args.root) / "mnist"
    if all((out / n).exists() for n in NAMES):
        print(f"MNIST already present in {out}")
        return
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    X = X.astype(np.uint8).reshape(-1, 28, 28)
    per_class = [np.flatnonzero(y == c) for c in range(10)]
    test_idx = np.sort(np.concatenate([idx[-args.test_per_class:] for idx in per_class]))
    # interleave classes so that any prefix of the training file stays balanced
    train_idx = np.stack([idx[:-args.test_per_class] for idx in per_class], axis=1).ravel()
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / NAMES[0], X[train_idx])
    write_idx_labels(out / NAMES[1], y[train_idx])
    write_idx_images(out / NAMES[2], X[test_idx])
    write_idx_labels(out / NAMES[3], y[test_idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test images to {out}")


if __name__ == "__main__":
    main()
