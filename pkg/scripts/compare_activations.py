#!/usr/bin/env python3
"""Train one network per hidden activation on the synthetic 3-class set.

Writes the ``activation,accuracy`` CSV produced by ``finclass
compare-activations``. The data directory is generated on first use.

    python3 scripts/compare_activations.py --work /tmp/desk --epochs 20 --out activations.csv
"""
import argparse
import sys
from pathlib import Path

from finclass.cli import dispatch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="desk_run")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="activations.csv")
    args = ap.parse_args()

    data = Path(args.work) / "data"
    if not (data / "manifest.txt").exists():
        dispatch(["synth", "--classes", "3", "--per-class", "100", "--seed", "7", "--out", str(data)])
    sys.exit(dispatch(["--threads", "1", "compare-activations", "--data", str(data),
                       "--epochs", str(args.epochs), "--seed", str(args.seed), "--out", args.out]))


if __name__ == "__main__":
    main()
