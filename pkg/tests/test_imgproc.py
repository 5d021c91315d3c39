import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from finclass import imgproc as ip
from finclass.errors import InvalidInputError, InvalidParameterError

from oracles import bfs_l1, dilate_ref, erode_ref, exact_euclidean, otsu_brute

SE3 = ip.StructuringElement(3)


def rand_mask(rng, shape=(32, 32), p=0.6):
    return np.where(rng.random(shape) < p, 255, 0).astype(np.uint8)


masks = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.sampled_from([0, 255]))


# -- grayscale / blur --------------------------------------------------------


def test_grayscale_examples():
    assert (ip.to_grayscale(np.full((2, 3, 3), 255, np.uint8)) == 255).all()
    assert (ip.to_grayscale(np.zeros((2, 3, 3), np.uint8)) == 0).all()
    assert ip.to_grayscale(np.array([[[255, 0, 0]]], np.uint8))[0, 0] == round(0.299 * 255) == 76


def test_grayscale_rejects_gray_input():
    with pytest.raises(InvalidInputError):
        ip.to_grayscale(np.zeros((4, 4), np.uint8))


@pytest.mark.parametrize("sigma", [0.5, 1.0, 3.0])
def test_blur_preserves_constant(sigma):
    assert (ip.gaussian_blur(np.full((9, 7), 7, np.uint8), sigma, 5) == 7).all()


def test_blur_impulse_matches_kernel():
    img = np.zeros((7, 7), np.uint8)
    img[3, 3] = 255
    out = ip.gaussian_blur(img, 1.0, 3)
    g = np.array([[math.exp(-(dx * dx + dy * dy) / 2.0) for dx in (-1, 0, 1)] for dy in (-1, 0, 1)])
    g /= g.sum()
    np.testing.assert_allclose(g[0], [0.0751, 0.1238, 0.0751], atol=1e-4)
    assert out[3, 3] == round(0.2042 * 255)
    np.testing.assert_array_equal(out[2:5, 2:5], np.rint(g * 255).astype(np.uint8))
    assert out.sum() == out[2:5, 2:5].sum()


def test_blur_keeps_horizontal_symmetry():
    rng = np.random.default_rng(3)
    half = rng.integers(0, 256, (10, 6), dtype=np.uint8)
    img = np.concatenate([half, half[:, ::-1]], axis=1)
    out = ip.gaussian_blur(img, 1.5, 5)
    np.testing.assert_array_equal(out, out[:, ::-1])


@pytest.mark.parametrize("sigma,ksize", [(1.0, 4), (0.0, 3), (-1.0, 3)])
def test_blur_bad_params(sigma, ksize):
    with pytest.raises(InvalidParameterError):
        ip.gaussian_blur(np.zeros((5, 5), np.uint8), sigma, ksize)


# -- otsu --------------------------------------------------------------------


def test_otsu_two_modes():
    img = np.array([[50] * 8 + [200] * 8], np.uint8)
    t, mask = ip.otsu_threshold(img)
    assert t == 50
    np.testing.assert_array_equal(mask, np.where(img == 200, 255, 0))


def test_otsu_four_pixels():
    t, mask = ip.otsu_threshold(np.array([[0, 0, 255, 255]], np.uint8))
    assert t == 0
    assert mask.tolist() == [[0, 0, 255, 255]]


@pytest.mark.parametrize("c", [0, 13, 255])
def test_otsu_constant(c):
    t, mask = ip.otsu_threshold(np.full((4, 4), c, np.uint8))
    assert t == c
    assert (mask == 0).all()


def test_otsu_empty():
    with pytest.raises(InvalidInputError):
        ip.otsu_threshold(np.zeros((0, 3), np.uint8))


@settings(max_examples=60, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_otsu_matches_brute_force(img):
    assert ip.otsu_threshold(img)[0] == otsu_brute(img)


# -- morphology --------------------------------------------------------------


def test_erode_examples():
    out = ip.erode(np.full((5, 5), 255, np.uint8), SE3, 1)
    expect = np.zeros((5, 5), np.uint8)
    expect[1:4, 1:4] = 255
    np.testing.assert_array_equal(out, expect)
    single = np.zeros((5, 5), np.uint8)
    single[2, 2] = 255
    assert (ip.erode(single, SE3) == 0).all()
    assert (ip.erode(np.zeros((4, 4), np.uint8), SE3) == 0).all()


def test_dilate_examples():
    single = np.zeros((5, 5), np.uint8)
    single[2, 2] = 255
    expect = np.zeros((5, 5), np.uint8)
    expect[1:4, 1:4] = 255
    np.testing.assert_array_equal(ip.dilate(single, SE3, 1), expect)
    assert (ip.dilate(single, SE3, 3) == 255).all()
    assert (ip.dilate(np.full((3, 3), 255, np.uint8), SE3) == 255).all()


def test_open_examples():
    speck = np.zeros((7, 7), np.uint8)
    speck[3, 3] = 255
    assert (ip.morphological_open(speck, SE3, 1) == 0).all()
    sq = np.zeros((15, 15), np.uint8)
    sq[3:12, 3:12] = 255
    np.testing.assert_array_equal(ip.morphological_open(sq, SE3, 2), sq)
    assert (ip.morphological_open(np.zeros((6, 6), np.uint8), SE3, 2) == 0).all()


def test_morphology_rejects_non_binary():
    with pytest.raises(InvalidInputError):
        ip.erode(np.full((3, 3), 7, np.uint8))


def test_morphology_matches_definitional_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m = rand_mask(rng, (12, 12))
        np.testing.assert_array_equal(ip.erode(m, SE3), erode_ref(m))
        np.testing.assert_array_equal(ip.dilate(m, SE3), dilate_ref(m))
        np.testing.assert_array_equal(ip.erode(m, ip.StructuringElement(5)), erode_ref(m, 2))


@settings(max_examples=80, deadline=None)
@given(masks)
def test_duality_on_zero_padded_mask(m):
    # Embed in a zero frame so the complement's border is part of the image.
    padded = np.pad(m, 2)
    lhs = ip.dilate(padded, SE3)
    rhs = 255 - ip.erode(255 - padded, SE3)
    np.testing.assert_array_equal(lhs[2:-2, 2:-2], rhs[2:-2, 2:-2])


@settings(max_examples=80, deadline=None)
@given(masks, st.integers(1, 3))
def test_open_anti_extensive_dilate_extensive(m, it):
    opened = ip.morphological_open(m, SE3, it)
    assert ((opened == 255) <= (m == 255)).all()
    assert ((m == 255) <= (ip.dilate(m, SE3, it) == 255)).all()


@settings(max_examples=80, deadline=None)
@given(masks)
def test_open_idempotent(m):
    once = ip.morphological_open(m, SE3, 1)
    np.testing.assert_array_equal(ip.morphological_open(once, SE3, 1), once)


# -- distance transform ------------------------------------------------------


def test_distance_row():
    d = ip.distance_transform(np.array([[0, 255, 255, 255, 0]], np.uint8), "L1")
    assert d.tolist() == [[0, 1, 2, 1, 0]]
    assert d.dtype == np.float32


def test_distance_no_background_sentinel():
    assert (ip.distance_transform(np.full((3, 3), 255, np.uint8)) == 6).all()
    assert (ip.distance_transform(np.full((2, 5), 255, np.uint8), "L2") == 7).all()


@settings(max_examples=60, deadline=None)
@given(masks)
def test_distance_zero_on_background(m):
    for metric in ("L1", "L2"):
        d = ip.distance_transform(m, metric)
        if (m == 0).any():
            assert (d[m == 0] == 0).all()
        assert (d >= 0).all()


def test_distance_l1_matches_bfs_and_l2_near_euclidean():
    rng = np.random.default_rng(5)
    for i in range(20):
        m = rand_mask(rng, (32, 32), p=0.6 + 0.3 * (i % 3) / 2)
        np.testing.assert_array_equal(ip.distance_transform(m, "L1"), bfs_l1(m))
        if (m == 0).any():
            err = np.abs(ip.distance_transform(m, "L2") - exact_euclidean(m))
            assert err.max() <= 0.3


def test_distance_bad_metric():
    with pytest.raises(InvalidParameterError):
        ip.distance_transform(np.zeros((2, 2), np.uint8), "Linf")


# -- threshold / subtract ----------------------------------------------------


def test_threshold_fraction_examples():
    assert ip.threshold_fraction(np.array([[0, 5, 8, 10]], np.float32), 0.7).tolist() == [[0, 0, 255, 255]]
    assert (ip.threshold_fraction(np.zeros((3, 3), np.float32), 0.7) == 0).all()
    assert ip.threshold_fraction(np.array([[3, 3, 3]], np.float32), 0.7).tolist() == [[255, 255, 255]]


@pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
def test_threshold_fraction_range(frac):
    with pytest.raises(InvalidParameterError):
        ip.threshold_fraction(np.ones((2, 2), np.float32), frac)


def test_mask_subtract():
    a = np.array([[255, 255, 0]], np.uint8)
    assert ip.mask_subtract(a, np.array([[255, 0, 0]], np.uint8)).tolist() == [[0, 255, 0]]
    assert (ip.mask_subtract(a, a) == 0).all()
    assert ip.mask_subtract(np.array([[0]], np.uint8), np.array([[255]], np.uint8)).tolist() == [[0]]
    with pytest.raises(InvalidInputError):
        ip.mask_subtract(a, np.zeros((2, 2), np.uint8))


# -- mean shift --------------------------------------------------------------


@pytest.mark.parametrize("levels", [0, 1, 2])
def test_mean_shift_constant_fixed_point(levels):
    img = np.full((12, 10, 3), (40, 90, 200), np.uint8)
    out = ip.pyramid_mean_shift(img, ip.MeanShiftParams(3, 30, levels))
    np.testing.assert_array_equal(out, img)


@pytest.mark.parametrize("levels", [0, 1])
def test_mean_shift_half_planes_unchanged(levels):
    img = np.zeros((6, 6, 3), np.uint8)
    img[:, 3:] = 255
    out = ip.pyramid_mean_shift(img, ip.MeanShiftParams(spatial_radius=2, color_radius=30, max_pyramid_level=levels))
    np.testing.assert_array_equal(out, img)


def _plain_mean_shift(img, sr, cr, iters, eps):
    """Straight per-pixel loop, no pyramid."""
    h, w, _ = img.shape
    f = img.astype(np.float64)
    out = np.zeros_like(f)
    for py in range(h):
        for px in range(w):
            y, x, c = float(py), float(px), f[py, px].copy()
            for _ in range(iters):
                cy, cx = int(np.rint(y)), int(np.rint(x))
                pts = [
                    (yy, xx)
                    for yy in range(max(cy - sr, 0), min(cy + sr + 1, h))
                    for xx in range(max(cx - sr, 0), min(cx + sr + 1, w))
                    if np.abs(f[yy, xx] - c).max() <= cr
                ]
                if not pts:
                    break
                ny = np.mean([p[0] for p in pts])
                nx = np.mean([p[1] for p in pts])
                nc = np.mean([f[p] for p in pts], axis=0)
                moved = max(abs(ny - y), abs(nx - x), np.abs(nc - c).max())
                y, x, c = ny, nx, nc
                if moved < eps:
                    break
            out[py, px] = c
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def test_mean_shift_level_zero_is_plain_filtering():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (9, 8, 3), dtype=np.uint8)
    p = ip.MeanShiftParams(spatial_radius=2, color_radius=60, max_pyramid_level=0, max_iterations=4)
    np.testing.assert_array_equal(ip.pyramid_mean_shift(img, p), _plain_mean_shift(img, 2, 60, 4, 1.0))


def test_mean_shift_single_step_stays_within_color_radius():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    p = ip.MeanShiftParams(spatial_radius=3, color_radius=25, max_pyramid_level=0, max_iterations=1)
    out = ip.pyramid_mean_shift(img, p).astype(int)
    # One iteration returns the mean of a window centred on the pixel's own color.
    assert (np.abs(out - img.astype(int)) <= 25 + 0.5).all()


def test_mean_shift_output_within_input_range():
    rng = np.random.default_rng(8)
    img = rng.integers(30, 200, (20, 20, 3), dtype=np.uint8)
    out = ip.pyramid_mean_shift(img, ip.MeanShiftParams(4, 40, 1))
    for c in range(3):
        assert img[..., c].min() <= out[..., c].min() and out[..., c].max() <= img[..., c].max()


def test_mean_shift_params_validation():
    with pytest.raises(InvalidParameterError):
        ip.MeanShiftParams(spatial_radius=0)
    with pytest.raises(InvalidParameterError):
        ip.MeanShiftParams(max_iterations=0)


# -- full segmentation -------------------------------------------------------


def disk_frame(radius=20):
    yy, xx = np.mgrid[0:100, 0:100]
    img = np.zeros((100, 100, 3), np.uint8)
    img[(yy - 50) ** 2 + (xx - 50) ** 2 <= radius * radius] = 255
    return img


def test_segment_disk_core():
    img = disk_frame()
    st_ = ip.segment_stages(img)
    mask = st_.sure_fg
    assert mask.shape == (100, 100)
    # Recompute the tail of the pipeline from the opened map.
    dist = ip.distance_transform(st_.opened, "L1")
    np.testing.assert_array_equal(mask, np.where(dist > 0.7 * dist.max(), 255, 0))
    ys, xs = np.nonzero(mask)
    assert mask[50, 50] == 255
    assert np.sqrt((ys - 50) ** 2 + (xs - 50) ** 2).max() <= 8
    assert abs(ys.mean() - 50) < 1 and abs(xs.mean() - 50) < 1
    assert (ip.mask_subtract(st_.sure_bg, mask) == st_.unknown).all()


def test_segment_black_frame():
    assert (ip.segment_foreground(np.zeros((100, 100, 3), np.uint8)) == 0).all()


def test_segment_shape_preserving_and_deterministic():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (37, 53, 3), dtype=np.uint8)
    a = ip.segment_foreground(img)
    b = ip.segment_foreground(img)
    assert a.shape == (37, 53)
    np.testing.assert_array_equal(a, b)
