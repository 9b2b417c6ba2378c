"""Write a shuffled MNIST subset in IDX format from the 5000-digit sample bundled with mlxtend.

    python3 scripts/make_mnist_idx.py OUT_DIR [--train 4000] [--test 1000] [--seed 0]

Produces train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz,
t10k-images-idx3-ubyte.gz and t10k-labels-idx1-ubyte.gz. Point the
experiment config at the full MNIST files instead when they are available.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from rnnprune.data import write_idx_images, write_idx_labels


def export(out_dir, n_train: int = 4000, n_test: int = 1000, seed: int = 0) -> dict[str, Path]:
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    if n_train + n_test > x.shape[0]:
        raise SystemExit(f"only {x.shape[0]} digits available")
    order = np.random.default_rng(seed).permutation(x.shape[0])
    x = x[order].reshape(-1, 28, 28)
    y = y[order]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out / "train-images-idx3-ubyte.gz",
        "train_labels": out / "train-labels-idx1-ubyte.gz",
        "test_images": out / "t10k-images-idx3-ubyte.gz",
        "test_labels": out / "t10k-labels-idx1-ubyte.gz",
    }
    write_idx_images(paths["train_images"], x[:n_train])
    write_idx_labels(paths["train_labels"], y[:n_train])
    write_idx_images(paths["test_images"], x[n_train : n_train + n_test])
    write_idx_labels(paths["test_labels"], y[n_train : n_train + n_test])
    return paths


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir")
    parser.add_argument("--train", type=int, default=4000)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    for name, path in export(args.out_dir, args.train, args.test, args.seed).items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
