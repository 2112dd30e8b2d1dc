"""Rebuild the ``mushrooms`` and ``a5a`` LIBSVM files from the raw UCI tables.

The official LIBSVM copies are not redistributed with this repository. This
script regenerates equivalent files from the public UCI sources:

* ``mushrooms``: UCI Mushroom (8124 rows). Every nominal attribute is one-hot
  expanded, except ``stalk-root`` (the attribute with missing values), which
  is dropped. That yields d = 112, labels ``1`` (edible) / ``2`` (poisonous).
* ``a5a``: UCI Adult training split (32561 rows), binarized the way the
  ``a1a``..``a9a`` family is: six continuous attributes are cut into bins
  (5, 5, 5, 2, 2, 5 bins) and eight categorical attributes are one-hot
  expanded with missing values left all-zero, giving d = 123. A seeded subset
  of 6414 rows is kept, the size of the published ``a5a`` training file.

Column order and row selection differ from the official files, so the
datasets are equivalent in shape and construction but not byte-identical.

Usage::

    python tools/make_datasets.py --mushroom-csv mushroom.csv \
        --adult-csv adult.csv --out data/

Both CSVs need a header row. The mushroom table must have the class column
first; the adult table uses the usual UCI column names.
"""
import argparse
from pathlib import Path

import numpy as np
import pandas as pd

A5A_ROWS = 6414
A5A_SEED = 5

ADULT_CATEGORICAL = [
    "workclass",
    "education",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "native-country",
]

# right-closed bin edges; each list yields the number of bins noted
ADULT_BINS = {
    "education-num": [-np.inf, 8, 9, 10, 12, np.inf],  # 5
    "capital-gain": [-np.inf, 0, np.inf],  # 2
    "capital-loss": [-np.inf, 0, np.inf],  # 2
    "hours-per-week": [-np.inf, 34, 39, 40, 49, np.inf],  # 5
}
ADULT_QUANTILE = {"age": 5, "fnlwgt": 5}

ADULT_ORDER = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
]


def _write_libsvm(path, labels, columns):
    """``columns`` is a list of 0/1 indicator arrays, written 1-based."""
    mat = np.column_stack(columns).astype(bool)
    with open(path, "w") as fh:
        for lab, row in zip(labels, mat):
            feats = " ".join(f"{j + 1}:1" for j in np.flatnonzero(row))
            fh.write(f"{lab} {feats}\n")
    return mat.shape


def build_mushrooms(csv_path, out_path):
    df = pd.read_csv(csv_path, dtype=str)
    label_col = df.columns[0]
    labels = np.where(df[label_col].str.strip() == "e", 1, 2)
    columns = []
    for col in df.columns[1:]:
        if (df[col] == "?").any():
            continue
        for value in sorted(df[col].unique()):
            columns.append((df[col] == value).to_numpy())
    return _write_libsvm(out_path, labels, columns)


def build_a5a(csv_path, out_path, rows=A5A_ROWS, seed=A5A_SEED):
    df = pd.read_csv(csv_path, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]
    label_col = df.columns[-1]
    columns = []
    for col in ADULT_ORDER:
        if col in ADULT_QUANTILE:
            codes = pd.qcut(df[col], ADULT_QUANTILE[col], labels=False).to_numpy()
            nbins = ADULT_QUANTILE[col]
        elif col in ADULT_BINS:
            edges = ADULT_BINS[col]
            codes = pd.cut(df[col], edges, labels=False).to_numpy()
            nbins = len(edges) - 1
        else:
            values = sorted(v for v in df[col].astype(str).str.strip().unique() if v != "?")
            vals = df[col].astype(str).str.strip()
            columns.extend((vals == v).to_numpy() for v in values)
            continue
        columns.extend(codes == b for b in range(nbins))
    labels = np.where(df[label_col].astype(str).str.contains(">50K"), 1, -1)
    keep = np.sort(np.random.default_rng(seed).choice(len(df), size=rows, replace=False))
    columns = [c[keep] for c in columns]
    return _write_libsvm(out_path, labels[keep], columns)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mushroom-csv", type=Path)
    parser.add_argument("--adult-csv", type=Path)
    parser.add_argument("--out", type=Path, default=Path("data"))
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.mushroom_csv:
        shape = build_mushrooms(args.mushroom_csv, args.out / "mushrooms")
        print(f"mushrooms: N={shape[0]} d={shape[1]}")
    if args.adult_csv:
        shape = build_a5a(args.adult_csv, args.out / "a5a")
        print(f"a5a: N={shape[0]} d={shape[1]}")


if __name__ == "__main__":
    main()
