"""Convert a CSV digits subset (784 pixel columns then the label) into IDX files.

The mlxtend wheel ships a 5,000-image MNIST subset sorted by class. Rows are
shuffled with a fixed seed so that "the first N records" is class-mixed, then
split into train and test files.

    python3 scripts/mnist_subset_to_idx.py path/to/mnist_5k.csv.gz data/mnist --test 1000
    python3 scripts/mnist_subset_to_idx.py path/to/mlxtend-*.whl data/mnist
"""

import argparse
import gzip
import io
import pathlib
import zipfile

import numpy as np

from advst.data import write_idx

WHEEL_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(path):
    path = pathlib.Path(path)
    if path.suffix == ".whl":
        blob = zipfile.ZipFile(path).read(WHEEL_MEMBER)
    else:
        blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    table = np.loadtxt(io.BytesIO(blob), delimiter=",", dtype=np.int64)
    if table.shape[1] != 785:
        raise SystemExit(f"{path}: expected 785 columns, got {table.shape[1]}")
    return table[:, :784].reshape(-1, 28, 28).astype(np.uint8), table[:, 784].astype(np.uint8)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=1000, help="records held out for the test files")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    images, labels = read_csv(args.source)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = len(labels) - args.test
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[:n_train])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[:n_train])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[n_train:])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[n_train:])
    print(f"wrote {n_train} train and {args.test} test records to {out}")


if __name__ == "__main__":
    main()
