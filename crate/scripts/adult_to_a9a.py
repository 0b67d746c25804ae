#!/usr/bin/env python3
"""Rebuild an a9a-layout libsvm file from the UCI Adult training split.

Layout (1-based feature ids, 123 binary features, 14 active per complete row):

    1-5    age              quintile bins
    6-13   workclass        one-hot, adult.names order
    14-18  fnlwgt           quintile bins
    19-34  education        one-hot
    35-39  education-num    quintile bins
    40-46  marital-status   one-hot
    47-60  occupation       one-hot
    61-66  relationship     one-hot
    67-71  race             one-hot
    72-73  sex              one-hot
    74-75  capital-gain     zero / nonzero
    76-77  capital-loss     zero / nonzero
    78-82  hours-per-week   quintile bins
    83-123 native-country   one-hot

Missing categorical values ("?") leave their block empty. Labels: ">50K" -> +1,
"<=50K" -> -1. Bin edges are recomputed from the data, so the result matches
the published a9a in size, layout and class balance but not byte-for-byte.

Usage: adult_to_a9a.py adult.data adult.names > data/a9a
"""
import sys

CATEGORICAL = [
    "workclass", "education", "marital-status", "occupation",
    "relationship", "race", "sex", "native-country",
]
# column index in adult.data -> (kind, name)
COLUMNS = [
    ("quint", "age"), ("cat", "workclass"), ("quint", "fnlwgt"),
    ("cat", "education"), ("quint", "education-num"),
    ("cat", "marital-status"), ("cat", "occupation"), ("cat", "relationship"),
    ("cat", "race"), ("cat", "sex"), ("zero", "capital-gain"),
    ("zero", "capital-loss"), ("quint", "hours-per-week"),
    ("cat", "native-country"),
]


def read_levels(names_path):
    levels = {}
    with open(names_path) as fh:
        for line in fh:
            head, _, rest = line.partition(":")
            if head in CATEGORICAL:
                levels[head] = [v.strip() for v in rest.strip().rstrip(".").split(",")]
    return levels


def quintile_edges(values):
    s = sorted(values)
    return [s[int(len(s) * q / 5)] for q in range(1, 5)]


def main():
    data_path, names_path = sys.argv[1], sys.argv[2]
    levels = read_levels(names_path)
    rows = []
    with open(data_path) as fh:
        for line in fh:
            parts = [p.strip() for p in line.strip().split(",")]
            if len(parts) == 15:
                rows.append(parts)

    edges = {}
    for col, (kind, name) in enumerate(COLUMNS):
        if kind == "quint":
            edges[col] = quintile_edges([float(r[col]) for r in rows])

    offsets, width = [], 0
    for kind, name in COLUMNS:
        offsets.append(width)
        width += {"quint": 5, "zero": 2}.get(kind, len(levels.get(name, [])))
    assert width == 123, width

    out = sys.stdout
    for r in rows:
        label = "+1" if r[14].startswith(">50K") else "-1"
        feats = []
        for col, (kind, name) in enumerate(COLUMNS):
            v = r[col]
            if kind == "cat":
                if v == "?":
                    continue
                slot = levels[name].index(v)
            elif kind == "zero":
                slot = 0 if float(v) == 0.0 else 1
            else:
                slot = sum(1 for e in edges[col] if float(v) > e)
            feats.append(offsets[col] + slot + 1)
        out.write(label + "".join(" %d:1" % f for f in feats) + "\n")


if __name__ == "__main__":
    main()
