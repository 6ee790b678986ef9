#!/usr/bin/env python3
"""Write MovieLens-100k as user,item,rating,timestamp CSV.

Source is either a local copy of u.data / ml-100k.inter, a wheel or zip that
bundles ml-100k.inter (e.g. the recbole wheel), or the GroupLens zip URL.
"""
import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def rows_from_text(text):
    for line in text.splitlines():
        parts = line.split("\t")
        if len(parts) < 4 or not parts[0].strip().isdigit():
            continue
        yield parts[0].strip(), parts[1].strip(), parts[2].strip(), parts[3].strip()


def load(source):
    if source.startswith("http://") or source.startswith("https://"):
        with urllib.request.urlopen(source) as resp:
            blob = resp.read()
        source_bytes = io.BytesIO(blob)
        archive = zipfile.ZipFile(source_bytes)
    else:
        path = Path(source)
        if not zipfile.is_zipfile(path):
            return list(rows_from_text(path.read_text()))
        archive = zipfile.ZipFile(path)
    for name in archive.namelist():
        if name.endswith("ml-100k/u.data") or name.endswith("ml-100k.inter"):
            return list(rows_from_text(archive.read(name).decode("utf-8")))
    sys.exit(f"no ml-100k ratings found in {source}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--source", default=GROUPLENS)
    ap.add_argument("--out", default="/root/data/ml-100k.csv")
    args = ap.parse_args()
    rows = load(args.source)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as f:
        f.write("# user,item,rating,timestamp\n")
        for r in rows:
            f.write(",".join(r) + "\n")
    print(f"wrote {len(rows)} ratings to {out}")


if __name__ == "__main__":
    main()
