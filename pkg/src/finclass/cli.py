"""Batch command-line front end.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as fdata
from .config import RunConfig, load_config
from .errors import FinclassError
from .imgproc import segment_stages
from .model import build_fishnet, load_checkpoint, predict, save_checkpoint
from .nn import ACTIVATIONS
from .optim import evaluate, fit

REFERENCE_SECONDS_PER_FRAME = 0.00183

log = logging.getLogger("finclass")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _config(args, **overrides) -> RunConfig:
    path = getattr(args, "config", None)
    if path:
        _existing(path, "config file")
    return load_config(path, overrides)


def _load_data(args, cfg: RunConfig) -> fdata.Dataset:
    ds = fdata.load_directory(_existing(args.data, "data root"), cfg.preprocess, args.workers)
    if ds.skipped:
        print(f"warning: skipped {ds.skipped} unreadable file(s)", file=sys.stderr)
    if len(ds) == 0:
        raise FinclassError(f"no readable images under {args.data}")
    return ds


# -- subcommands -------------------------------------------------------------


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    img = fdata.read_image(_existing(args.image, "image"))
    stages = segment_stages(img, cfg.preprocess)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in stages.images().items():
        suffix = ".ppm" if arr.ndim == 3 else ".pgm"
        fdata.write_image(out / f"{name}{suffix}", arr)
    print(f"otsu threshold {stages.otsu_t}; wrote {len(stages.images())} stage images to {out}")
    return 0


def cmd_synth(args) -> int:
    n = fdata.write_synthetic(args.out, args.classes, args.per_class, args.seed)
    print(f"wrote {n} images to {args.out}")
    return 0


def _train_one(cfg: RunConfig, train: fdata.Dataset, activation: str, history_path: Path | None = None):
    tc = dataclasses.replace(cfg.train, activation=activation)
    net = build_fishnet(
        len(train.class_names), activation, tc.seed, cfg.hidden_units, cfg.keep_prob, train.class_names
    )
    hist = fit(net, train, tc)
    if history_path is not None:
        history_path.write_text(hist.to_csv(), encoding="utf-8")
    return net, hist


def cmd_train(args) -> int:
    cfg = _config(args, epochs=args.epochs, seed=args.seed, activation=args.activation, checkpoint=args.checkpoint)
    if not cfg.checkpoint:
        raise UsageError("train: --checkpoint is required (flag or config key)")
    ds = _load_data(args, cfg)
    train, test = fdata.split(ds, cfg.test_fraction, cfg.split_seed)
    ckpt = Path(cfg.checkpoint)
    history = Path(args.history) if args.history else ckpt.with_suffix(".history.csv")
    t0 = time.perf_counter()
    net, hist = _train_one(cfg, train, cfg.train.activation, history)
    save_checkpoint(net, ckpt)
    print(f"trained {cfg.train.epochs} epochs on {len(train)} samples in {time.perf_counter() - t0:.1f}s")
    print(f"final train loss {hist.epoch_loss[-1]:.6f}, train accuracy {hist.epoch_accuracy[-1]:.2f}%")
    if len(test):
        m = evaluate(net, test)
        print(f"test accuracy {m.accuracy:.2f}% on {len(test)} samples")
        if cfg.report_out:
            Path(cfg.report_out).write_text(m.report(ds.class_names) + "\n", encoding="utf-8")
    print(f"checkpoint: {ckpt}\nhistory: {history}")
    return 0


def cmd_eval(args) -> int:
    net = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    cfg = _config(args)
    ds = _load_data(args, cfg)
    if ds.class_names != net.spec.class_names:
        raise FinclassError(f"dataset classes {ds.class_names} differ from checkpoint classes {net.spec.class_names}")
    if args.subset != "all":
        train, test = fdata.split(ds, cfg.test_fraction, cfg.split_seed)
        ds = train if args.subset == "train" else test
    m = evaluate(net, ds)
    print(f"evaluated {len(ds)} samples ({args.subset})")
    print(m.report(net.spec.class_names))
    return 0


def cmd_predict(args) -> int:
    net = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    cfg = _config(args)
    img = fdata.read_image(_existing(args.image, "image"))
    sample = fdata.make_sample(img, 0, args.image, cfg.preprocess)
    idx, probs = predict(net, sample.tensor)
    print(net.spec.class_names[idx])
    for name, p in zip(net.spec.class_names, probs):
        print(f"  {name}: {p:.6f}")
    return 0


def cmd_bench(args) -> int:
    net = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    cfg = _config(args)
    if args.iters < 1:
        raise UsageError("bench: --iters must be >= 1")
    if args.image:
        img = fdata.read_image(_existing(args.image, "image"))
    else:
        img = fdata.render_frame("ellipse", 0, np.random.default_rng(0)).image
    fdata.make_sample(img, 0, "warmup", cfg.preprocess)  # JIT warm-up, not timed
    times = []
    for _ in range(args.iters):
        t0 = time.perf_counter()
        sample = fdata.make_sample(img, 0, "bench", cfg.preprocess)
        predict(net, sample.tensor)
        times.append(time.perf_counter() - t0)
    mean = float(np.mean(times))
    print(f"mean per-frame segmentation + inference: {mean:.6f} s over {args.iters} iterations")
    print(f"reference figure (different hardware and pipeline): {REFERENCE_SECONDS_PER_FRAME} s/frame, ratio {mean / REFERENCE_SECONDS_PER_FRAME:.1f}x")
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args, epochs=args.epochs, seed=args.seed)
    ds = _load_data(args, cfg)
    train, test = fdata.split(ds, cfg.test_fraction, cfg.split_seed)
    rows = ["activation,accuracy"]
    for act in args.activations:
        net, _ = _train_one(cfg, train, act)
        acc = evaluate(net, test).accuracy
        print(f"{act}: {acc:.2f}%", file=sys.stderr)
        rows.append(f"{act},{acc:.4f}")
    report = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    print(report, end="")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    env_threads = os.environ.get("FINCLASS_THREADS")
    p = _Parser(prog="finclass", description="Fish image segmentation and CNN classification.")
    p.add_argument("--threads", type=int, default=int(env_threads) if env_threads else None,
                   help="BLAS thread cap; 1 gives bit-reproducible runs (default: $FINCLASS_THREADS)")
    p.add_argument("--workers", type=int, default=1, help="parallel image ingestion workers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="dump every segmentation stage for one image")
    s.add_argument("image")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="write a synthetic class-per-directory dataset")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train on a dataset directory and write a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--checkpoint")
    s.add_argument("--activation", choices=ACTIVATIONS)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--history", help="CSV history path (default: <checkpoint>.history.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config")
    s.add_argument("--subset", choices=("all", "train", "test"), default="all")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="classify one image")
    s.add_argument("--image", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("bench", help="time per-frame segmentation + inference")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--image")
    s.add_argument("--config")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("compare-activations", help="train one model per hidden activation")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="CSV report path (also printed)")
    s.add_argument("--activations", nargs="+", choices=ACTIVATIONS, default=list(ACTIVATIONS))
    s.set_defaults(func=cmd_compare)
    return p


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    limits = threadpool_limits(limits=args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except (FinclassError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
