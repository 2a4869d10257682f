#!/usr/bin/env python3
"""Write data/pima.csv and data/heart.csv in the layout the harness expects.

Sources, in order of preference:

1. Raw UCI files you already have::

       fetch_datasets.py --pima pima-indians-diabetes.data.csv \
                         --cleveland processed.cleveland.data

   (UCI: "Pima Indians Diabetes" and "Heart Disease", processed Cleveland
   subset.)

2. Otherwise the same data is pulled from PyPI wheels that bundle it:
   ``keel-ds`` (the 768-row PIMA set, rows in a different order) and
   ``orange3`` (the 303-row Cleveland set with symbolic codes, mapped back to
   the UCI numeric codes here). This needs ``pip download`` to work.

Cleveland rows with missing values (6 of 303) are dropped and the 0-4
``num`` target becomes 0 (no disease) / 1 (disease), the usual binary task.
"""

import argparse
import csv
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

PIMA_HEADER = [
    "pregnancies", "glucose", "blood_pressure", "skin_thickness",
    "insulin", "bmi", "diabetes_pedigree", "age", "outcome",
]
HEART_HEADER = [
    "age", "sex", "cp", "trestbps", "chol", "fbs", "restecg",
    "thalach", "exang", "oldpeak", "slope", "ca", "thal", "num",
]

# Orange's symbolic values -> UCI numeric codes, by column position.
ORANGE_CODES = {
    1: {"male": 1, "female": 0},
    2: {"typical ang": 1, "atypical ang": 2, "non-anginal": 3, "asymptomatic": 4},
    6: {"normal": 0, "ST-T abnormal": 1, "left vent hypertrophy": 2},
    10: {"upsloping": 1, "flat": 2, "downsloping": 3},
    12: {"normal": 3, "fixed defect": 6, "reversable defect": 7},
}


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def pima_from_uci(path: Path):
    rows = []
    for line in path.read_text().splitlines():
        cells = [c.strip() for c in line.split(",")]
        if len(cells) == 9 and cells[0] and not cells[0][0].isalpha():
            rows.append(cells)
    return rows


def cleveland_from_uci(path: Path):
    rows = []
    for line in path.read_text().splitlines():
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 14 or "?" in cells:
            continue
        cells[13] = "1" if float(cells[13]) > 0 else "0"
        rows.append([_num(c) for c in cells])
    return rows


def _num(text: str) -> str:
    v = float(text)
    return str(int(v)) if v.is_integer() else repr(v)


def _wheel(package: str, workdir: Path) -> zipfile.ZipFile:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:", "-q", "-d", str(workdir), package],
        check=True,
    )
    name = package.replace("-", "_").lower()
    matches = [p for p in workdir.glob("*.whl") if p.name.lower().startswith(name)]
    if not matches:
        raise SystemExit(f"pip did not produce a wheel for {package}")
    return zipfile.ZipFile(matches[0])


def pima_from_keel(workdir: Path):
    raw = _wheel("keel-ds", workdir).read("keel_ds/data/balanced/raw/pima.dat").decode()
    rows = []
    for line in raw.splitlines():
        cells = [c.strip() for c in line.split(",")]
        if len(cells) == 9:
            cells[8] = {"tested_positive": "1", "tested_negative": "0"}[cells[8]]
            rows.append(cells)
    return rows


def cleveland_from_orange(workdir: Path):
    raw = _wheel("orange3", workdir).read("Orange/datasets/heart_disease.tab").decode()
    rows = []
    for line in raw.splitlines()[3:]:
        cells = line.split("\t")
        if len(cells) != 14 or any(c.strip() in ("", "?") for c in cells):
            continue
        out = []
        for j, c in enumerate(cells):
            c = c.strip()
            out.append(str(ORANGE_CODES[j][c]) if j in ORANGE_CODES else _num(c))
        rows.append(out)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pima", type=Path, help="UCI pima-indians-diabetes data file")
    ap.add_argument("--cleveland", type=Path, help="UCI processed.cleveland.data file")
    ap.add_argument("--out-dir", type=Path, default=Path(__file__).resolve().parents[1] / "data")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        pima = pima_from_uci(args.pima) if args.pima else pima_from_keel(tmp)
        heart = cleveland_from_uci(args.cleveland) if args.cleveland else cleveland_from_orange(tmp)
    if len(pima) != 768:
        raise SystemExit(f"expected 768 PIMA rows, got {len(pima)}")
    if len(heart) != 297:
        raise SystemExit(f"expected 297 complete Cleveland rows, got {len(heart)}")
    write_csv(args.out_dir / "pima.csv", PIMA_HEADER, pima)
    write_csv(args.out_dir / "heart.csv", HEART_HEADER, heart)


if __name__ == "__main__":
    main()
