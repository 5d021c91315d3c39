"""Classical foreground segmentation for fish frames.

Images are plain numpy arrays: ``uint8`` of shape ``(H, W)`` for single-channel
data and ``(H, W, 3)`` for RGB. Binary masks are ``uint8`` ``(H, W)`` arrays
holding only 0 and 255. Distance maps are ``float32`` ``(H, W)``.

Every function here is pure, so frames can be processed concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InvalidInputError, InvalidParameterError

WHITE = 255

# Chamfer weights for the 5x5 L2 approximation: axial, diagonal, knight move.
CHAMFER_A = 1.0
CHAMFER_B = math.sqrt(2.0)
CHAMFER_C = math.sqrt(5.0)


@dataclass(frozen=True)
class StructuringElement:
    """Square all-ones kernel anchored at its center."""

    size: int = 3

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise InvalidParameterError(f"structuring element size must be odd and >= 1, got {self.size}")

    @property
    def radius(self) -> int:
        return self.size // 2


@dataclass(frozen=True)
class MeanShiftParams:
    spatial_radius: int = 10
    color_radius: float = 30.0
    max_pyramid_level: int = 1
    max_iterations: int = 5
    convergence_epsilon: float = 1.0

    def __post_init__(self):
        if self.spatial_radius <= 0 or self.color_radius <= 0:
            raise InvalidParameterError("mean shift radii must be positive")
        if self.max_pyramid_level < 0:
            raise InvalidParameterError("max_pyramid_level must be >= 0")
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")


@dataclass(frozen=True)
class PreprocessConfig:
    blur_sigma: float = 1.0
    blur_ksize: int = 3
    se_size: int = 3
    open_iterations: int = 2
    dilate_iterations: int = 3
    dist_metric: str = "L1"
    dist_fraction: float = 0.7
    ms_spatial_radius: int = 10
    ms_color_radius: float = 30.0
    ms_pyramid_levels: int = 1
    ms_max_iterations: int = 5
    ms_epsilon: float = 1.0

    def mean_shift_params(self) -> MeanShiftParams:
        return MeanShiftParams(
            spatial_radius=self.ms_spatial_radius,
            color_radius=self.ms_color_radius,
            max_pyramid_level=self.ms_pyramid_levels,
            max_iterations=self.ms_max_iterations,
            convergence_epsilon=self.ms_epsilon,
        )


def _check_gray(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise InvalidInputError(f"{name} must be single-channel (H, W), got shape {img.shape}")
    if img.size == 0:
        raise InvalidInputError(f"{name} has zero area")
    return img


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise InvalidInputError("image has zero area")
    return img


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = _check_gray(mask, "mask")
    if mask.dtype != np.uint8 or not np.isin(mask, (0, WHITE)).all():
        raise InvalidInputError("mask must be uint8 with values in {0, 255}")
    return mask


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luma ``round(0.299 R + 0.587 G + 0.114 B)``."""
    img = _check_rgb(img).astype(np.float64)
    luma = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return np.clip(np.rint(luma), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float, ksize: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    if ksize < 1 or ksize % 2 == 0:
        raise InvalidParameterError(f"ksize must be odd, got {ksize}")
    r = ksize // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _separable(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Convolve rows then columns of a float array, replicating edges."""
    r = len(taps) // 2
    h, w = img.shape[:2]
    pad = np.pad(img, ((0, 0), (r, r)) + ((0, 0),) * (img.ndim - 2), mode="edge")
    out = sum(t * pad[:, i : i + w] for i, t in enumerate(taps))
    pad = np.pad(out, ((r, r), (0, 0)) + ((0, 0),) * (img.ndim - 2), mode="edge")
    return sum(t * pad[i : i + h] for i, t in enumerate(taps))


def gaussian_blur(img: np.ndarray, sigma: float = 1.0, ksize: int = 3) -> np.ndarray:
    img = _check_gray(img)
    taps = gaussian_kernel(sigma, ksize)
    out = _separable(img.astype(np.float64), taps)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def otsu_threshold(img: np.ndarray) -> tuple[int, np.ndarray]:
    """Otsu threshold over all 256 grey levels.

    Pixels ``<= t`` form the dark class. The between-class variance is compared
    in exact integer arithmetic so ties resolve to the smallest ``t``. A
    single-valued image has no separating threshold; ``t`` is that value and the
    mask comes back all black.
    """
    img = _check_gray(img)
    hist = np.bincount(img.astype(np.uint8).ravel(), minlength=256)
    levels = np.arange(256)
    n0 = np.cumsum(hist).tolist()
    s0 = np.cumsum(hist * levels).tolist()
    n, s = n0[-1], s0[-1]

    # sigma_b^2 * n^2 = (n1*s0 - n0*s1)^2 / (n0*n1); keep it as a fraction.
    best_t, best_num, best_den = None, 0, 1
    for t in range(256):
        c0, c1 = n0[t], n - n0[t]
        if c0 == 0 or c1 == 0:
            continue
        num = (c1 * s0[t] - c0 * (s - s0[t])) ** 2
        den = c0 * c1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t is None:
        best_t = int(img.flat[0])
    mask = np.where(img > best_t, WHITE, 0).astype(np.uint8)
    return best_t, mask


def _morph_step(mask: np.ndarray, r: int, reduce) -> np.ndarray:
    h, w = mask.shape
    pad = np.pad(mask, r, mode="constant", constant_values=0)
    out = pad[r : r + h, r : r + w].copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            reduce(out, pad[r + dy : r + dy + h, r + dx : r + dx + w], out=out)
    return out


def erode(mask: np.ndarray, se: StructuringElement = StructuringElement(), iterations: int = 1) -> np.ndarray:
    mask = _check_mask(mask)
    if iterations < 1:
        raise InvalidParameterError("iterations must be >= 1")
    for _ in range(iterations):
        mask = _morph_step(mask, se.radius, np.minimum)
    return mask


def dilate(mask: np.ndarray, se: StructuringElement = StructuringElement(), iterations: int = 1) -> np.ndarray:
    mask = _check_mask(mask)
    if iterations < 1:
        raise InvalidParameterError("iterations must be >= 1")
    for _ in range(iterations):
        mask = _morph_step(mask, se.radius, np.maximum)
    return mask


def morphological_open(mask: np.ndarray, se: StructuringElement = StructuringElement(), iterations: int = 1) -> np.ndarray:
    return dilate(erode(mask, se, iterations), se, iterations)


def _prefix_chamfer(row: np.ndarray, step: float) -> np.ndarray:
    """min over j <= i of row[j] + step*(i - j), vectorized along the last axis."""
    idx = np.arange(row.shape[-1]) * step
    return np.minimum.accumulate(row - idx, axis=-1) + idx


def _chamfer_pass(d: np.ndarray, neighbors: list[tuple[int, int, float]]) -> None:
    """One raster pass (top-down, left-to-right) over ``d`` in place.

    ``neighbors`` lists (dy, dx, weight) with dy < 0; the in-row left
    neighbor is handled by a running prefix minimum.
    """
    h, w = d.shape
    for y in range(h):
        row = d[y]
        for dy, dx, wgt in neighbors:
            yy = y + dy
            if yy < 0:
                continue
            src = d[yy]
            if dx >= 0:
                np.minimum(row[: w - dx], src[dx:] + wgt, out=row[: w - dx])
            else:
                np.minimum(row[-dx:], src[: w + dx] + wgt, out=row[-dx:])
        d[y] = _prefix_chamfer(row, CHAMFER_A)


_L1_MASK = [(-1, 0, 1.0)]
_L2_MASK = [
    (-1, 0, CHAMFER_A),
    (-1, -1, CHAMFER_B),
    (-1, 1, CHAMFER_B),
    (-1, -2, CHAMFER_C),
    (-1, 2, CHAMFER_C),
    (-2, -1, CHAMFER_C),
    (-2, 1, CHAMFER_C),
]


def distance_transform(mask: np.ndarray, metric: str = "L1") -> np.ndarray:
    """Distance from each foreground pixel to the nearest zero pixel.

    L1 is exact (two-pass chamfer, axial weight 1, diagonal 2 implied by the
    axial steps). L2 uses the 5x5 chamfer mask with weights 1, sqrt(2),
    sqrt(5). A mask without any zero pixel yields ``width + height`` everywhere.
    """
    mask = _check_mask(mask)
    if metric not in ("L1", "L2"):
        raise InvalidParameterError(f"unknown distance metric {metric!r}")
    h, w = mask.shape
    if (mask != 0).all():
        return np.full((h, w), float(w + h), dtype=np.float32)
    nb = _L1_MASK if metric == "L1" else _L2_MASK
    d = np.where(mask == 0, 0.0, np.inf)
    _chamfer_pass(d, nb)
    # The backward pass is the forward pass on the 180-degree rotated grid.
    rot = d[::-1, ::-1].copy()
    _chamfer_pass(rot, nb)
    return rot[::-1, ::-1].astype(np.float32)


def threshold_fraction(dist: np.ndarray, fraction: float = 0.7) -> np.ndarray:
    if not 0.0 < fraction <= 1.0:
        raise InvalidParameterError(f"fraction must lie in (0, 1], got {fraction}")
    dist = np.asarray(dist, dtype=np.float32)
    top = float(dist.max()) if dist.size else 0.0
    if top == 0.0:
        return np.zeros(dist.shape, dtype=np.uint8)
    return np.where(dist > np.float32(fraction * top), WHITE, 0).astype(np.uint8)


def mask_subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Saturating per-pixel ``max(a - b, 0)``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return np.clip(a.astype(np.int16) - b.astype(np.int16), 0, 255).astype(np.uint8)


# -- pyramid mean shift ------------------------------------------------------

_PYR_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def pyr_down(img: np.ndarray) -> np.ndarray:
    """5-tap Gaussian blur then keep every second row and column."""
    return _separable(img, _PYR_TAPS)[::2, ::2]


def pyr_up_nearest(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(img, 2, axis=0), 2, axis=1)
    return up[: shape[0], : shape[1]]


@numba.njit(cache=True, nogil=True)
def _mean_shift_kernel(img, start, r, cr, max_iter, eps):
    h, w, nc = img.shape
    out = np.empty((h, w, nc))
    col = np.empty(nc)
    acc = np.empty(nc)
    for py in range(h):
        for px in range(w):
            y, x = float(py), float(px)
            for c in range(nc):
                col[c] = start[py, px, c]
            for _ in range(max_iter):
                cy = int(np.rint(y))
                cx = int(np.rint(x))
                sy = 0.0
                sx = 0.0
                cnt = 0
                for c in range(nc):
                    acc[c] = 0.0
                for ny in range(max(cy - r, 0), min(cy + r + 1, h)):
                    for nx in range(max(cx - r, 0), min(cx + r + 1, w)):
                        near = True
                        for c in range(nc):
                            if abs(img[ny, nx, c] - col[c]) > cr:
                                near = False
                                break
                        if near:
                            cnt += 1
                            sy += ny
                            sx += nx
                            for c in range(nc):
                                acc[c] += img[ny, nx, c]
                if cnt == 0:
                    break
                sy /= cnt
                sx /= cnt
                moved = max(abs(sy - y), abs(sx - x))
                for c in range(nc):
                    acc[c] /= cnt
                    moved = max(moved, abs(acc[c] - col[c]))
                    col[c] = acc[c]
                y, x = sy, sx
                if moved < eps:
                    break
            for c in range(nc):
                out[py, px, c] = col[c]
    return out


def _mean_shift(img: np.ndarray, start: np.ndarray, p: MeanShiftParams) -> np.ndarray:
    """Flat-kernel mean shift in joint (y, x, color) space for every pixel.

    The window around the current point holds pixels within ``spatial_radius``
    (Chebyshev, around the rounded position) whose color is within
    ``color_radius`` on every channel. ``start`` holds each pixel's starting
    color. Returns the converged window-mean color per pixel.
    """
    return _mean_shift_kernel(
        np.ascontiguousarray(img, dtype=np.float64),
        np.ascontiguousarray(start, dtype=np.float64),
        int(p.spatial_radius),
        float(p.color_radius),
        int(p.max_iterations),
        float(p.convergence_epsilon),
    )


def pyramid_mean_shift(img: np.ndarray, params: MeanShiftParams = MeanShiftParams()) -> np.ndarray:
    """Coarse-to-fine mean-shift filtering of an RGB frame.

    The coarsest level starts every pixel from its own color. Each finer level
    starts a pixel from the upsampled coarse result, unless that color is more
    than ``color_radius`` away from the pixel's own color (an edge the coarse
    level blurred), in which case the pixel restarts from its own color.
    Every output pixel is a converged window mean at full resolution.
    """
    img = _check_rgb(img)
    levels = [img.astype(np.float64)]
    for _ in range(params.max_pyramid_level):
        if min(levels[-1].shape[:2]) < 2:
            break
        levels.append(pyr_down(levels[-1]))

    result = _mean_shift(levels[-1], levels[-1], params)
    for lvl in reversed(levels[:-1]):
        up = pyr_up_nearest(result, lvl.shape[:2])
        far = np.abs(up - lvl).max(axis=2) > params.color_radius
        start = np.where(far[..., None], lvl, up)
        result = _mean_shift(lvl, start, params)
    return np.clip(np.rint(result), 0, 255).astype(np.uint8)


# -- full pipeline -----------------------------------------------------------


@dataclass
class SegmentationStages:
    """Every intermediate map produced by :func:`segment_stages`."""

    shifted: np.ndarray
    gray: np.ndarray
    blurred: np.ndarray
    otsu_t: int
    binary: np.ndarray
    opened: np.ndarray
    sure_bg: np.ndarray
    dist: np.ndarray
    sure_fg: np.ndarray
    unknown: np.ndarray = field(repr=False)

    def images(self) -> dict[str, np.ndarray]:
        """Stage name -> uint8 image, in pipeline order (distance rescaled to 0..255)."""
        top = float(self.dist.max())
        dist8 = np.zeros(self.dist.shape, np.uint8) if top == 0 else np.rint(self.dist / top * 255).astype(np.uint8)
        return {
            "01_meanshift": self.shifted,
            "02_gray": self.gray,
            "03_blur": self.blurred,
            "04_otsu": self.binary,
            "05_opened": self.opened,
            "06_sure_bg": self.sure_bg,
            "07_dist": dist8,
            "08_sure_fg": self.sure_fg,
            "09_unknown": self.unknown,
        }


def segment_stages(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> SegmentationStages:
    img = _check_rgb(img)
    se = StructuringElement(cfg.se_size)
    shifted = pyramid_mean_shift(img, cfg.mean_shift_params())
    gray = to_grayscale(shifted)
    blurred = gaussian_blur(gray, cfg.blur_sigma, cfg.blur_ksize)
    t, binary = otsu_threshold(blurred)
    opened = morphological_open(binary, se, cfg.open_iterations)
    sure_bg = dilate(opened, se, cfg.dilate_iterations)
    dist = distance_transform(opened, cfg.dist_metric)
    sure_fg = threshold_fraction(dist, cfg.dist_fraction)
    unknown = mask_subtract(sure_bg, sure_fg)
    return SegmentationStages(shifted, gray, blurred, t, binary, opened, sure_bg, dist, sure_fg, unknown)


def segment_foreground(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Sure-foreground mask used as the network's fourth input channel."""
    return segment_stages(img, cfg).sure_fg
