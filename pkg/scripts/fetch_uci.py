#!/usr/bin/env python3
"""Download the Sonar and Pima benchmark tables into data/ as headered CSV.

Each output file gets a `f1..fd,label` header so `kweave --format csv`
loads it directly. Downloads are validated against the published shapes
before anything is written. Needs network access; run once, the
acceptance tests in tests/test_acceptance.py pick the files up from
data/ automatically.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import urllib.error
import urllib.request
from pathlib import Path

SOURCES = {
    "sonar": {
        "urls": [
            "https://archive.ics.uci.edu/ml/machine-learning-databases/undocumented/"
            "connectionist-bench/sonar/sonar.all-data",
            "https://raw.githubusercontent.com/mlittmancs/great_courses_ml/master/data/sonar.all-data",
        ],
        "n": 208,
        "d": 60,
        "classes": {"R", "M"},
    },
    "pima": {
        "urls": [
            "https://raw.githubusercontent.com/jbrownlee/Datasets/master/pima-indians-diabetes.csv",
            "https://raw.githubusercontent.com/plotly/datasets/master/diabetes.csv",
        ],
        "n": 768,
        "d": 8,
        "classes": {"0", "1"},
    },
}


def fetch(url: str, timeout: float = 30.0) -> str:
    req = urllib.request.Request(url, headers={"User-Agent": "kweave-fetch/0.1"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read().decode("utf-8")


def parse_rows(text: str, spec: dict) -> list[list[str]]:
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or all(not cell.strip() for cell in row):
            continue
        rows.append([cell.strip() for cell in row])
    # some mirrors ship a header line; drop it when the first row is non-numeric
    if rows and not _is_float(rows[0][0]):
        rows = rows[1:]
    return rows


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def validate(rows: list[list[str]], spec: dict, name: str) -> None:
    if len(rows) != spec["n"]:
        raise SystemExit(f"{name}: expected {spec['n']} rows, got {len(rows)}")
    for i, row in enumerate(rows):
        if len(row) != spec["d"] + 1:
            raise SystemExit(f"{name} row {i}: expected {spec['d'] + 1} columns, got {len(row)}")
        for cell in row[:-1]:
            if not _is_float(cell):
                raise SystemExit(f"{name} row {i}: non-numeric feature {cell!r}")
    labels = {row[-1] for row in rows}
    if labels != spec["classes"]:
        raise SystemExit(f"{name}: label set {labels} != expected {spec['classes']}")


def write_csv(rows: list[list[str]], d: int, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j + 1}" for j in range(d)] + ["label"])
        writer.writerows(rows)


def fetch_dataset(name: str, out_dir: Path) -> Path:
    spec = SOURCES[name]
    last_error = None
    for url in spec["urls"]:
        try:
            text = fetch(url)
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            print(f"{name}: {url} failed ({exc}), trying next mirror", file=sys.stderr)
            last_error = exc
            continue
        rows = parse_rows(text, spec)
        validate(rows, spec, name)
        out = out_dir / f"{name}.csv"
        write_csv(rows, spec["d"], out)
        print(f"{name}: {len(rows)} rows -> {out}")
        return out
    raise SystemExit(f"{name}: every mirror failed (last error: {last_error})")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path("data"))
    parser.add_argument(
        "datasets", nargs="*", metavar="dataset",
        help=f"subset to fetch from {sorted(SOURCES)} (default: all)",
    )
    args = parser.parse_args()
    unknown = [name for name in args.datasets if name not in SOURCES]
    if unknown:
        parser.error(f"unknown dataset(s) {unknown}; choose from {sorted(SOURCES)}")
    for name in args.datasets or list(SOURCES):
        fetch_dataset(name, args.out_dir)


if __name__ == "__main__":
    main()
