#!/usr/bin/env python3
"""Synthetic desk experiment: 3 shapes x 100 frames, ReLU network, five seeds.

Each seed is a separate single-threaded ``finclass train`` run on the same
data and split; only the initialisation/shuffle seed changes. Prints one line
per seed and a summary, and writes a CSV if ``--out`` is given.

    python3 scripts/run_desk_experiment.py --work /tmp/desk --out desk.csv
"""
import argparse
import time
from pathlib import Path

from finclass import data as fd
from finclass.cli import dispatch
from finclass.config import load_config
from finclass.model import load_checkpoint
from finclass.optim import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="desk_run", help="scratch directory for data and checkpoints")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--activation", default="relu")
    ap.add_argument("--out")
    args = ap.parse_args()

    work = Path(args.work)
    data = work / "data"
    if not (data / "manifest.txt").exists():
        dispatch(["synth", "--classes", "3", "--per-class", "100", "--seed", "7", "--out", str(data)])
    cfg = load_config()
    _, test = fd.split(fd.load_directory(data, cfg.preprocess), cfg.test_fraction, cfg.split_seed)

    rows = ["seed,test_accuracy,seconds"]
    for seed in args.seeds:
        ckpt = work / f"{args.activation}_s{seed}.fnet"
        t0 = time.perf_counter()
        rc = dispatch(["--threads", "1", "train", "--data", str(data), "--checkpoint", str(ckpt),
                       "--activation", args.activation, "--epochs", str(args.epochs), "--seed", str(seed)])
        secs = time.perf_counter() - t0
        if rc != 0:
            raise SystemExit(rc)
        acc = evaluate(load_checkpoint(ckpt), test).accuracy
        print(f"seed {seed}: test accuracy {acc:.2f}% in {secs:.1f}s")
        rows.append(f"{seed},{acc:.4f},{secs:.2f}")

    accs = [float(r.split(",")[1]) for r in rows[1:]]
    print(f"{sum(a >= 95 for a in accs)}/{len(accs)} seeds reach 95%")
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
