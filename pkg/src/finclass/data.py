"""Dataset ingestion, four-channel stacking, splitting and synthetic frames."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidInputError, InvalidParameterError
from .imgproc import PreprocessConfig, segment_foreground

log = logging.getLogger(__name__)

SIDE = 100
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")
SHAPES = ("ellipse", "triangle", "crescent", "bar", "ring")


@dataclass
class Sample:
    tensor: np.ndarray  # (100, 100, 4) float32 in [0, 1]
    label: int
    source: str


@dataclass
class Dataset:
    samples: list[Sample]
    class_names: list[str]
    skipped: int = 0

    def __len__(self):
        return len(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(N, 100, 100, 4)`` inputs and ``(N,)`` labels."""
        if not self.samples:
            return np.zeros((0, SIDE, SIDE, 4), np.float32), np.zeros(0, np.int64)
        x = np.stack([s.tensor for s in self.samples])
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return x, y

    def subset(self, idx) -> "Dataset":
        return Dataset([self.samples[i] for i in idx], list(self.class_names))


# -- image IO ----------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Decode PNG/PPM/PGM into a uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, img: np.ndarray) -> None:
    """Write a uint8 array; format follows the suffix (.pgm/.ppm/.png)."""
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format=fmt)


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers: ``src = (dst + 0.5) * scale - 0.5``, clamped."""
    if out_w < 1 or out_h < 1:
        raise InvalidParameterError(f"target size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    f = img.astype(np.float64)
    if f.ndim == 3:
        fy, fx = fy[:, None, None], fx[None, :, None]
    else:
        fy, fx = fy[:, None], fx[None, :]
    top = f[y0][:, x0] * (1 - fx) + f[y0][:, x1] * fx
    bot = f[y1][:, x0] * (1 - fx) + f[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# -- stacking ----------------------------------------------------------------


def make_sample(rgb: np.ndarray, label: int, source: str, cfg: PreprocessConfig = PreprocessConfig()) -> Sample:
    """Resize to 100x100, segment, and stack RGB/255 with mask/255."""
    rgb = resize_bilinear(rgb, SIDE, SIDE)
    mask = segment_foreground(rgb, cfg)
    tensor = np.empty((SIDE, SIDE, 4), dtype=np.float32)
    tensor[..., :3] = rgb / np.float32(255)
    tensor[..., 3] = mask / np.float32(255)
    return Sample(tensor, label, source)


def _ingest(jobs, cfg, workers):
    def one(job):
        rgb, label, source = job
        return make_sample(rgb, label, source, cfg)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, jobs))  # map keeps input order
    return [one(j) for j in jobs]


def list_tree(root) -> tuple[list[str], list[tuple[Path, int]]]:
    root = Path(root)
    if not root.is_dir():
        raise InvalidInputError(f"data root {root} does not exist")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise InvalidInputError(f"data root {root} has no class subdirectories")
    files = [
        (p, label)
        for label, name in enumerate(classes)
        for p in sorted((root / name).iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return classes, files


def load_directory(root, cfg: PreprocessConfig = PreprocessConfig(), workers: int = 1) -> Dataset:
    """Load ``root/<class>/*.png|ppm|pgm`` into a Dataset.

    Classes are the sorted subdirectory names. Files that fail to decode are
    skipped and counted in ``Dataset.skipped``.
    """
    classes, files = list_tree(root)
    jobs, skipped = [], 0
    for path, label in files:
        try:
            jobs.append((read_image(path), label, str(path)))
        except (OSError, UnidentifiedImageError, ValueError) as e:
            skipped += 1
            log.warning("skipping unreadable image %s: %s", path, e)
    return Dataset(_ingest(jobs, cfg, workers), classes, skipped)


def write_manifest(ds: Dataset, path) -> None:
    lines = [f"{s.source}\t{s.label}\t{ds.class_names[s.label]}\n" for s in ds.samples]
    Path(path).write_text("".join(lines), encoding="utf-8")


def split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split: each class sends ceil(count * test_fraction) samples to test."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in ds.samples], dtype=np.int64)
    train_idx, test_idx = [], []
    for c, name in enumerate(ds.class_names):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            if len(idx):
                log.warning("class %r has %d sample(s); keeping it entirely in train", name, len(idx))
            train_idx.extend(idx.tolist())
            continue
        perm = idx[rng.permutation(len(idx))]
        k = math.ceil(len(idx) * test_fraction)
        test_idx.extend(perm[:k].tolist())
        train_idx.extend(perm[k:].tolist())
    return ds.subset(sorted(train_idx)), ds.subset(sorted(test_idx))


# -- synthetic frames --------------------------------------------------------


@dataclass
class SynthFrame:
    image: np.ndarray  # (100, 100, 3) uint8
    label: int
    shape: str
    footprint: np.ndarray = field(repr=False)  # bool (100, 100), rendered shape pixels

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(y0, x0, y1, x1), inclusive-exclusive."""
        ys, xs = np.nonzero(self.footprint)
        return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


def _footprint(shape: str, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:SIDE, 0:SIDE].astype(np.float64)
    cy, cx = rng.uniform(35, 65, size=2)
    theta = rng.uniform(0, 2 * np.pi)
    s = rng.uniform(0.85, 1.15)
    # Local frame: u along the shape's long axis.
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    if shape == "ellipse":
        return (u / (22 * s)) ** 2 + (v / (12 * s)) ** 2 <= 1
    if shape == "triangle":
        # Isosceles, apex at +u; base at u = -14s with half-width 16s.
        a, half = 28 * s, 16 * s
        uu = u + 14 * s
        return (uu >= 0) & (uu <= a) & (np.abs(v) <= half * (1 - uu / a))
    if shape == "crescent":
        r = 20 * s
        return (u * u + v * v <= r * r) & ((u - 0.55 * r) ** 2 + v * v > (0.85 * r) ** 2)
    if shape == "bar":
        return (np.abs(u) <= 26 * s) & (np.abs(v) <= 7 * s)
    if shape == "ring":
        d2 = u * u + v * v
        return (d2 <= (21 * s) ** 2) & (d2 >= (12 * s) ** 2)
    raise InvalidParameterError(f"unknown shape {shape!r}")


def render_frame(shape: str, label: int, rng: np.random.Generator) -> SynthFrame:
    """One 100x100 RGB frame: a bright shape on a noisy dark water background."""
    fp = _footprint(shape, rng)
    water = np.array([20, 60, 80], dtype=np.float64) + rng.uniform(-10, 10, size=3)
    img = np.broadcast_to(water, (SIDE, SIDE, 3)) + rng.normal(0, 8, size=(SIDE, SIDE, 3))
    fish = np.array([220, 190, 120], dtype=np.float64) + rng.uniform(-25, 25, size=3)
    body = fish + rng.normal(0, 6, size=(SIDE, SIDE, 3))
    img = np.where(fp[..., None], body, img)
    return SynthFrame(np.clip(np.rint(img), 0, 255).astype(np.uint8), label, shape, fp)


def render_synthetic(n_classes: int, per_class: int, seed: int) -> tuple[list[str], list[SynthFrame]]:
    if not 2 <= n_classes <= len(SHAPES):
        raise InvalidParameterError(f"n_classes must be in 2..{len(SHAPES)}, got {n_classes}")
    if per_class < 1:
        raise InvalidParameterError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    names = sorted(SHAPES[:n_classes])
    frames = [render_frame(name, label, rng) for label, name in enumerate(names) for _ in range(per_class)]
    return names, frames


def synth_generate(
    n_classes: int, per_class: int, seed: int, cfg: PreprocessConfig = PreprocessConfig(), workers: int = 1
) -> Dataset:
    """Procedural stand-in dataset, run through the standard ingestion path."""
    names, frames = render_synthetic(n_classes, per_class, seed)
    counters = [0] * n_classes
    jobs = []
    for f in frames:
        jobs.append((f.image, f.label, f"synth:{names[f.label]}/{counters[f.label]:04d}"))
        counters[f.label] += 1
    return Dataset(_ingest(jobs, cfg, workers), names)


def write_synthetic(out_dir, n_classes: int, per_class: int, seed: int) -> int:
    """Write frames as ``out_dir/<shape>/<i>.png`` plus ``manifest.txt``; returns the image count."""
    out = Path(out_dir)
    names, frames = render_synthetic(n_classes, per_class, seed)
    lines, counters = [], [0] * n_classes
    for f in frames:
        d = out / names[f.label]
        d.mkdir(parents=True, exist_ok=True)
        p = d / f"{counters[f.label]:04d}.png"
        counters[f.label] += 1
        write_image(p, f.image)
        lines.append(f"{p}\t{f.label}\t{names[f.label]}\n")
    (out / "manifest.txt").write_text("".join(lines), encoding="utf-8")
    return len(frames)
