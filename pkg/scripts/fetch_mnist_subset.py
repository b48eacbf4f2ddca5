"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

Usage: python scripts/fetch_mnist_subset.py [--out data/mnist5k]

The images are stored in a seeded random order (the bundled file is sorted
by label) so that prefixes of the IDX file are class-balanced samples.
"""

import argparse
import gzip
import os
from pathlib import Path

import numpy as np

from gdr.data_io import write_idx


def bundled_csv():
    import mlxtend

    return Path(os.path.dirname(mlxtend.__file__)) / "data" / "data" / "mnist_5k.csv.gz"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    with gzip.open(bundled_csv(), "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    images, labels = table[:, :-1], table[:, -1]
    order = np.random.default_rng(args.seed).permutation(len(labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "images-idx3-ubyte.gz", images[order].reshape(-1, 28, 28))
    write_idx(out / "labels-idx1-ubyte.gz", labels[order])
    print(f"wrote {len(labels)} images to {out}")


if __name__ == "__main__":
    main()
