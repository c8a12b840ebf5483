"""Monte Carlo certification of the four SGD bounds (configs/bounds_*.ini).

Usage: python3 scripts/certify_bounds.py [--out DIR]
"""

import argparse
import csv
import sys
from pathlib import Path

from bandwidth_sgd.cli import main

ROOT = Path(__file__).resolve().parent.parent
BOUNDS = ("stepdecay", "stepdecay_grow", "sqrt_const", "sqrt_decay")


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(ROOT / "out"))
    args = p.parse_args(argv)
    failed = 0
    for b in BOUNDS:
        out = Path(args.out) / f"bounds_{b}"
        code = main(["bounds", str(ROOT / "configs" / f"bounds_{b}.ini"), "--check", "--out", str(out)])
        if code:
            return code
        with open(out / "bound_check.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        ok = sum(r["pass"] == "PASS" for r in rows)
        failed += len(rows) - ok
        print(f"{b}: {ok}/{len(rows)} PASS")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(run())
