#!/usr/bin/env python3
"""Download the UCI airfoil and aquatic datasets and convert them to CSV.

The output files carry a header row and put the label in the last column,
which is the layout ``rejectreg`` reads. Point ``REJECTREG_DATA_DIR`` at the
output directory afterwards.

Usage::

    python scripts/fetch_uci.py --out data/
    python scripts/fetch_uci.py --out data/ --from-file airfoil=airfoil_self_noise.dat

``--from-file`` converts an archive or raw file you downloaded yourself,
for machines without network access.
"""

import argparse
import csv
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

SOURCES = {
    # 1503 rows, 5 features, label: scaled sound pressure level (dB); tab separated
    "airfoil": {
        "url": "https://archive.ics.uci.edu/static/public/291/airfoil+self+noise.zip",
        "member": "airfoil_self_noise.dat",
        "sep": None,
        "header": ["frequency", "angle_of_attack", "chord_length", "free_stream_velocity",
                   "suction_side_displacement_thickness", "sound_pressure_level"],
    },
    # 546 rows, 8 features, label: LC50; semicolon separated
    "aquatic": {
        "url": "https://archive.ics.uci.edu/static/public/505/qsar+aquatic+toxicity.zip",
        "member": "qsar_aquatic_toxicity.csv",
        "sep": ";",
        "header": ["TPSA", "SAacc", "H050", "MLOGP", "RDCHI", "GATS1p", "nN", "C040", "LC50"],
    },
}


def _extract(raw: bytes, member: str) -> str:
    if raw[:2] == b"PK":
        with zipfile.ZipFile(io.BytesIO(raw)) as zf:
            name = next(n for n in zf.namelist() if n.endswith(member))
            raw = zf.read(name)
    return raw.decode("utf-8")


def convert(name: str, raw: bytes) -> list:
    src = SOURCES[name]
    rows = []
    for line in _extract(raw, src["member"]).splitlines():
        if not line.strip():
            continue
        cells = line.split(src["sep"]) if src["sep"] else line.split()
        if len(cells) != len(src["header"]):
            raise ValueError(f"{name}: expected {len(src['header'])} fields, got {len(cells)}: {line!r}")
        rows.append([repr(float(c)) for c in cells])
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--only", choices=sorted(SOURCES), action="append")
    ap.add_argument("--from-file", action="append", default=[], metavar="NAME=PATH")
    args = ap.parse_args(argv)
    local = dict(item.split("=", 1) for item in args.from_file)
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.only or sorted(SOURCES):
        if name in local:
            raw = Path(local[name]).read_bytes()
        else:
            with urllib.request.urlopen(SOURCES[name]["url"], timeout=60) as resp:
                raw = resp.read()
        rows = convert(name, raw)
        dest = args.out / f"{name}.csv"
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SOURCES[name]["header"])
            w.writerows(rows)
        print(f"{name}: {len(rows)} rows -> {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
