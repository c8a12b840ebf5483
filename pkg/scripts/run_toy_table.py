"""Toy four-minima study: every schedule in configs/toy_table.ini.

Usage: python3 scripts/run_toy_table.py [--trials N] [--out DIR]
"""

import argparse
import csv
import sys
from pathlib import Path

from bandwidth_sgd.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int)
    p.add_argument("--out", default=str(ROOT / "out" / "toy"))
    args = p.parse_args(argv)
    cmd = ["toy", str(ROOT / "configs" / "toy_table.ini"), "--out", args.out]
    if args.trials:
        cmd += ["--trials", str(args.trials)]
    code = main(cmd)
    if code:
        return code
    with open(Path(args.out) / "toy_report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'schedule':<22}{'min1':>8}{'min2':>8}{'min3':>8}{'min4':>8}{'div':>6}")
    for r in rows:
        pct = "".join(f"{float(r[f'pct_min{k}']):>8.2f}" for k in (1, 2, 3, 4))
        print(f"{r['schedule']:<22}{pct}{r['diverged']:>6}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
