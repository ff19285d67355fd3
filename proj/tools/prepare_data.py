#!/usr/bin/env python3
"""Regenerate the bundled benchmark CSVs under data/.

The raw tables come from Python packages that ship UCI copies offline:
scikit-learn (iris, wine, breast cancer), pydataset (MASS::fgl = glass),
keel-ds (australian), Orange3 (Cleveland heart disease) and
imbalanced-databases (hepatitis). Pass the directory holding the downloaded
wheels/sdists with --cache (fetch them with `pip download --no-deps`).

Every output CSV has a header, uses "?" for missing values and ends with a
binary `label` column.
"""
import argparse
import csv
import glob
import io
import os
import tarfile
import zipfile


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header + ["label"])
        w.writerows(rows)
    pos = sum(1 for r in rows if r[-1] == 1)
    print(f"{os.path.basename(path)}: {len(rows)} rows, {pos} positive")


def from_sklearn(out):
    from sklearn import datasets

    iris = datasets.load_iris()
    header = ["sepal_length", "sepal_width", "petal_length", "petal_width"]
    rows = [list(map(float, x)) + [int(t == 1)] for x, t in zip(iris.data, iris.target)]
    write(os.path.join(out, "iris.csv"), header, rows)

    wine = datasets.load_wine()
    rows = [list(map(float, x)) + [int(t == 2)] for x, t in zip(wine.data, wine.target)]
    write(os.path.join(out, "wine.csv"), [n.replace("/", "_") for n in wine.feature_names], rows)

    bc = datasets.load_breast_cancer()
    rows = [list(map(float, x)) + [int(t == 0)] for x, t in zip(bc.data, bc.target)]
    write(os.path.join(out, "cancer.csv"), [n.replace(" ", "_") for n in bc.feature_names], rows)


def open_member(cache, pattern, member):
    for path in glob.glob(os.path.join(cache, pattern)):
        if path.endswith(".whl"):
            return zipfile.ZipFile(path).read(member).decode()
        with tarfile.open(path) as tf:
            inner = tf.extractfile(next(m for m in tf.getmembers() if m.name.endswith("resources.tar.gz")))
            with tarfile.open(fileobj=io.BytesIO(inner.read())) as res:
                return res.extractfile(next(m for m in res.getmembers() if m.name.endswith(member))).read().decode()
    raise FileNotFoundError(pattern)


def glass(cache, out):
    text = open_member(cache, "pydataset-*.tar.gz", "rdata/csv/MASS/fgl.csv")
    reader = csv.reader(io.StringIO(text))
    header = next(reader)[1:-1]
    rows = [[float(v) for v in r[1:-1]] + [int(r[-1] in ("WinF", "WinNF"))] for r in reader]
    write(os.path.join(out, "glass.csv"), header, rows)


def australian(cache, out):
    text = open_member(cache, "keel_ds-*.whl", "keel_ds/data/balanced/raw/australian.dat")
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("@"):
            continue
        v = line.split(",")
        rows.append([float(x) for x in v[:-1]] + [int(v[-1].strip() == "0")])
    write(os.path.join(out, "australian.csv"), [f"A{i}" for i in range(1, 15)], rows)


def heart(cache, out):
    text = open_member(cache, "orange3-*.whl", "Orange/datasets/heart_disease.tab")
    lines = text.splitlines()
    header = [h.replace(" ", "_").replace(">", "gt") for h in lines[0].split("\t")]
    rows = []
    for line in lines[3:]:
        v = line.split("\t")
        feats = [x.strip().replace(" ", "_") if x.strip() != "" else "?" for x in v[:-1]]
        rows.append(feats + [int(v[-1])])
    write(os.path.join(out, "heart.csv"), header[:-1], rows)


def hepatitis(cache, out):
    text = open_member(cache, "imbalanced_databases-*.whl",
                       "imbalanced_databases/data/hepatitis/hepatitis.data.txt")
    header = ["age", "sex", "steroid", "antivirals", "fatigue", "malaise", "anorexia",
              "liver_big", "liver_firm", "spleen_palpable", "spiders", "ascites", "varices",
              "bilirubin", "alk_phosphate", "sgot", "albumin", "protime", "histology"]
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        v = line.strip().split(",")
        rows.append(v[1:] + [int(v[0] == "1")])
    write(os.path.join(out, "hepatitis.csv"), header, rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cache", required=True)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    from_sklearn(a.out)
    glass(a.cache, a.out)
    australian(a.cache, a.out)
    heart(a.cache, a.out)
    hepatitis(a.cache, a.out)


if __name__ == "__main__":
    main()
