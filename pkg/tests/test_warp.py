import numpy as np
import pytest

from panolight.geometry import Intrinsics, backproject, dir_to_equirect
from panolight.scenes import BoxRoom, Box
from panolight.warp import (OUT_OF_VIEW, STRETCH, VISIBLE, WarpError, classify_holes, hole_image,
                            warp_to_locale)


def _source_rays(K, idx):
    py, px = np.divmod(idx, K.width)
    p = backproject(px + 0.5, py + 0.5, 1.0, K)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def test_colors_match_ray_cast(room, view):
    image, depth, K = view
    w = warp_to_locale(image, depth, K, (0.2, -0.1, -0.5), 256, 128)
    q = np.flatnonzero(w.mask)
    src = w.source_index.ravel()[q]
    assert np.all(src >= 0)
    _, _, rad = room.raycast(np.zeros(3), _source_rays(K, src))
    np.testing.assert_array_equal(w.pano.reshape(-1, 3)[q], np.clip(rad, 0, 1).astype(np.float32))
    assert np.all(w.source_index[~w.mask] == -1)
    assert np.all(w.pano[~w.mask] == 0) and np.all(w.depth[~w.mask] == 0)


def test_distance_is_analytic(room, view):
    image, depth, K = view
    R = np.array([0.3, 0.1, -0.4])
    w = warp_to_locale(image, depth, K, R, 256, 128)
    q = np.flatnonzero(w.mask)
    src = w.source_index.ravel()[q]
    t, pts, _ = room.raycast(np.zeros(3), _source_rays(K, src))
    np.testing.assert_allclose(w.depth.ravel()[q], np.linalg.norm(pts - R, axis=-1), rtol=1e-5)


def test_zbuffer_keeps_nearest_sample(view):
    image, depth, K = view
    R = np.array([0.5, 0.0, 0.5])
    W, H = 64, 32
    w = warp_to_locale(image, depth, K, R, W, H)
    # brute force: every source pixel's target cell and distance
    py, px = np.mgrid[0:K.height, 0:K.width] + 0.5
    pts = backproject(px, py, depth.astype(np.float64), K).reshape(-1, 3) - R
    dist = np.linalg.norm(pts, axis=-1)
    u, v = dir_to_equirect(pts / dist[:, None])
    cell = np.minimum((v * H).astype(int), H - 1) * W + np.minimum((u * W).astype(int), W - 1)
    best = np.full(W * H, np.inf)
    np.minimum.at(best, cell, dist)
    got = w.depth.ravel()
    filled = np.isfinite(best)
    np.testing.assert_array_equal(w.mask.ravel(), filled)
    np.testing.assert_allclose(got[filled], best[filled], rtol=1e-6)


def test_threads_give_identical_result(view):
    image, depth, K = view
    a = warp_to_locale(image, depth, K, (0.1, 0.2, -0.3), 128, 64, n_jobs=1)
    b = warp_to_locale(image, depth, K, (0.1, 0.2, -0.3), 128, 64, n_jobs=4)
    for name in ("pano", "depth", "mask", "hole_class", "source_index"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_occluder_hides_wall():
    room = BoxRoom(boxes=[Box((-0.3, -0.3, -2.0), (0.3, 0.3, -1.5), (1.0, 0.0, 0.0))])
    K = Intrinsics.from_fov(48, 48, 60)
    image, depth = room.render_perspective(K)
    w = warp_to_locale(image, depth, K, (0, 0, 0), 256, 128)
    # the ray straight ahead hits the red box face
    np.testing.assert_array_equal(w.pano[64, 128], [1.0, 0.0, 0.0])


def test_invalid_fraction_is_large(view):
    image, depth, K = view
    w = warp_to_locale(image, depth, K, (0, 0, 0), 512, 256)
    assert w.invalid_fraction > 0.6


def test_warp_validation(view):
    image, depth, K = view
    with pytest.raises(WarpError):
        warp_to_locale(image, depth, K, (0, 0, 0), 100, 100)
    with pytest.raises(WarpError):
        warp_to_locale(image, depth, Intrinsics.from_fov(32, 32, 60), (0, 0, 0), 64, 32)
    with pytest.raises(WarpError):
        warp_to_locale(image, np.zeros_like(depth), K, (0, 0, 0), 64, 32)
    with pytest.raises(ValueError):
        warp_to_locale(image, depth, K, (0, np.nan, 0), 64, 32)
    with pytest.raises(ValueError):
        warp_to_locale(image[..., :2], depth, K, (0, 0, 0), 64, 32)


def test_nonpositive_depth_pixels_are_skipped(view):
    image, depth, K = view
    d = depth.copy()
    d[:, :32] = 0.0
    d[0, 40] = np.nan
    w = warp_to_locale(image, d, K, (0, 0, 0), 128, 64)
    src = w.source_index[w.mask]
    assert np.all(src % K.width >= 32)
    assert 40 not in src


def test_classify_small_hole_is_stretch():
    m = np.ones((12, 24), bool)
    m[5, 10] = False
    m[6, 11] = False
    c = classify_holes(m)
    assert c[5, 10] == STRETCH and c[6, 11] == STRETCH
    assert np.all(c[m] == VISIBLE)


def test_classify_band_outside_view_is_out_of_view():
    m = np.zeros((16, 32), bool)
    m[:, 8:16] = True
    c = classify_holes(m, radius=3)
    # pixels just left of the valid block see valid pixels only on one side
    assert np.all(c[:, 5:8] == OUT_OF_VIEW)
    assert np.all(c[:, 20:30] == OUT_OF_VIEW)


def test_classify_wraps_horizontally():
    m = np.zeros((8, 16), bool)
    m[:, 0] = True
    m[:, 14] = True
    c = classify_holes(m, radius=3)
    assert np.all(c[:, 15] == STRETCH)


def test_classify_min_valid():
    m = np.zeros((9, 9), bool)
    m[4, 3] = m[4, 5] = True
    assert classify_holes(m, 3, 2)[4, 4] == STRETCH
    assert classify_holes(m, 3, 3)[4, 4] == OUT_OF_VIEW


def test_hole_image_levels():
    c = np.array([[VISIBLE, STRETCH, OUT_OF_VIEW]], np.uint8)
    np.testing.assert_allclose(hole_image(c) * 255, [[0, 128, 255]])
