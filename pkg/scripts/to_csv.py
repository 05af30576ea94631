"""Convert a downloaded regression dataset to the CSV layout ``credo real`` reads.

Two input layouts are understood:

* ``svmlight``: ``target idx:value ...`` per line (the LIBSVM regression
  files ``cadata`` and ``abalone``);
* ``table``: whitespace-separated numbers with the target in the last
  column (the Delve ``bank`` family ``Dataset.data`` files).

The output has a header ``x0,...,x{F-1},target``.

Example::

    python scripts/to_csv.py svmlight cadata $CREDO_DATA_DIR/cadata.csv
"""

import argparse
import csv
import gzip
from pathlib import Path


def _open(path: Path):
    return gzip.open(path, "rt") if path.suffix == ".gz" else path.open()


def read_svmlight(path: Path):
    rows = []
    with _open(path) as fh:
        for line in fh:
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            feats = {int(k): float(v) for k, v in (p.split(":", 1) for p in parts[1:])}
            rows.append((float(parts[0]), feats))
    dim = max((max(f) for _, f in rows if f), default=0)
    return [[f.get(k, 0.0) for k in range(1, dim + 1)] + [y] for y, f in rows]


def read_table(path: Path):
    with _open(path) as fh:
        return [[float(v) for v in line.split()] for line in fh if line.strip()]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("layout", choices=["svmlight", "table"])
    p.add_argument("source", type=Path)
    p.add_argument("dest", type=Path)
    args = p.parse_args(argv)
    rows = read_svmlight(args.source) if args.layout == "svmlight" else read_table(args.source)
    if not rows:
        p.error(f"{args.source}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        p.error(f"{args.source}: rows have differing widths {sorted(widths)}")
    args.dest.parent.mkdir(parents=True, exist_ok=True)
    with args.dest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(widths.pop() - 1)] + ["target"])
        w.writerows([[repr(v) for v in r] for r in rows])
    print(f"wrote {len(rows)} rows to {args.dest}")


if __name__ == "__main__":
    main()
