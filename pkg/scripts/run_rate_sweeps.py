"""Convergence-rate sweeps for the three rate configs; prints fitted log-log slopes.

Usage: python3 scripts/run_rate_sweeps.py [--trials N] [--out DIR]
"""

import argparse
import csv
import sys
from pathlib import Path

from bandwidth_sgd.cli import main

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ("rate_stepdecay_grow", "rate_sqrt_decay", "rate_sgdm")


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int)
    p.add_argument("--out", default=str(ROOT / "out"))
    args = p.parse_args(argv)
    for name in CONFIGS:
        out = Path(args.out) / name
        cmd = ["sweep", str(ROOT / "configs" / f"{name}.ini"), "--out", str(out)]
        if args.trials:
            cmd += ["--trials", str(args.trials)]
        code = main(cmd)
        if code:
            return code
        with open(out / "sweep_fit.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                print(f"{name}: slope {float(r['slope']):.3f}, r^2 {float(r['r_squared']):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
