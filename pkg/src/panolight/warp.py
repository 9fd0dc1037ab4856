"""Forward warping of a perspective RGB-D view into a locale-centered panorama."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, backproject, dir_to_equirect
from ._validation import check_depth, check_image, check_locale

VISIBLE = 0
STRETCH = 1
OUT_OF_VIEW = 2
# gray levels used when the hole labels are written to disk
HOLE_LEVELS = {VISIBLE: 0, STRETCH: 128, OUT_OF_VIEW: 255}


class WarpError(ValueError):
    pass


@dataclass
class WarpResult:
    """Sparse panorama produced by :func:`warp_to_locale`.

    ``pano`` is RGB, ``depth`` holds the distance to the locale (0 where
    invalid), ``mask`` marks pixels that received a splat and
    ``hole_class`` labels every pixel VISIBLE / STRETCH / OUT_OF_VIEW.
    ``source_index`` is the flat index of the winning input pixel (-1 if
    none). The inputs are kept so later stages can reproject into them.
    """

    pano: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    hole_class: np.ndarray
    source_index: np.ndarray
    image: np.ndarray = None
    source_depth: np.ndarray = None
    intrinsics: Intrinsics = None
    locale: np.ndarray = None

    @property
    def invalid_fraction(self):
        return 1.0 - float(self.mask.mean())


def _splat_rows(image, depth, K, locale, row_lo, row_hi, out_w, out_h):
    d = depth[row_lo:row_hi].astype(np.float64)
    h, w = d.shape
    cols, rows = np.meshgrid(np.arange(w), np.arange(row_lo, row_hi))
    valid = np.isfinite(d) & (d > 0)
    if not np.any(valid):
        return (np.empty(0, np.int64),) * 2 + (np.empty(0),)
    src = (rows * image.shape[1] + cols)[valid]
    world = backproject(cols[valid] + 0.5, rows[valid] + 0.5, d[valid], K)
    vec = world - locale
    dist = np.linalg.norm(vec, axis=1)
    keep = dist >= 1e-6
    src, vec, dist = src[keep], vec[keep], dist[keep]
    u, v = dir_to_equirect(vec / dist[:, None])
    oc = np.minimum(np.floor(u * out_w).astype(np.int64), out_w - 1)
    orow = np.minimum(np.floor(v * out_h).astype(np.int64), out_h - 1)
    return orow * out_w + oc, src, dist


def _zbuffer(target, src, dist):
    """Keep the nearest splat per target; equal distances go to the
    earliest source pixel in row-major order."""
    order = np.lexsort((src, dist, target))
    target, src, dist = target[order], src[order], dist[order]
    first = np.ones(target.shape, dtype=bool)
    first[1:] = target[1:] != target[:-1]
    return target[first], src[first], dist[first]


def warp_to_locale(image, depth, K, locale, out_width=512, out_height=256, n_jobs=1,
                   hole_radius=3, hole_min_valid=2):
    """Splat every valid input pixel into an equirect panorama centered at ``locale``.

    Each pixel is backprojected with its depth, re-expressed relative to the
    locale and written to the single output pixel containing its direction.
    A z-buffer on distance to the locale resolves collisions. ``n_jobs > 1``
    splits the input rows across threads; the result is identical.
    """
    image = check_image(image, "image")
    depth = check_depth(depth, image.shape[:2])
    locale = check_locale(locale)
    if out_width != 2 * out_height:
        raise WarpError(f"output panorama must be 2:1, got {out_width}x{out_height}")
    if (K.width, K.height) != (image.shape[1], image.shape[0]):
        raise WarpError("intrinsics size does not match the image")
    if not np.any(np.isfinite(depth) & (depth > 0)):
        raise WarpError("depth map has no valid pixels")

    H = image.shape[0]
    if n_jobs <= 1:
        parts = [_splat_rows(image, depth, K, locale, 0, H, out_width, out_height)]
    else:
        bounds = np.linspace(0, H, n_jobs + 1).astype(int)
        with ThreadPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(
                lambda b: _zbuffer(*_splat_rows(image, depth, K, locale, b[0], b[1],
                                                out_width, out_height)),
                zip(bounds[:-1], bounds[1:])))
    target, src, dist = _zbuffer(*(np.concatenate(x) for x in zip(*parts)))

    n_out = out_width * out_height
    flat_img = image.reshape(-1, image.shape[2])
    pano = np.zeros((n_out, image.shape[2]), dtype=np.float32)
    pano[target] = flat_img[src]
    pdepth = np.zeros(n_out, dtype=np.float32)
    pdepth[target] = dist
    mask = np.zeros(n_out, dtype=bool)
    mask[target] = True
    source_index = np.full(n_out, -1, dtype=np.int64)
    source_index[target] = src

    shape = (out_height, out_width)
    mask = mask.reshape(shape)
    return WarpResult(
        pano=pano.reshape(shape + (image.shape[2],)),
        depth=pdepth.reshape(shape),
        mask=mask,
        hole_class=classify_holes(mask, hole_radius, hole_min_valid),
        source_index=source_index.reshape(shape),
        image=image, source_depth=depth, intrinsics=K, locale=locale,
    )


def _window_count(mask, radius):
    """Number of true pixels in the (2r+1)^2 window, wrapping horizontally."""
    m = np.pad(mask.astype(np.int32), ((radius, radius), (0, 0)))
    m = np.pad(m, ((0, 0), (radius, radius)), mode="wrap")
    c = np.pad(m.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    k = 2 * radius + 1
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def _shift(mask, dy, dx):
    """``out[y, x] = mask[y + dy, x + dx]``; wraps in x, False outside in y."""
    out = np.roll(mask, -dx, axis=1)
    if dy > 0:
        out = np.concatenate([out[dy:], np.zeros((dy, mask.shape[1]), bool)])
    elif dy < 0:
        out = np.concatenate([np.zeros((-dy, mask.shape[1]), bool), out[:dy]])
    return out


def _enclosed(mask, radius):
    """True where valid pixels lie on both sides along a row, column or diagonal."""
    enclosed = np.zeros(mask.shape, dtype=bool)
    for ay, ax in ((0, 1), (1, 0), (1, 1), (1, -1)):
        fwd = np.zeros(mask.shape, dtype=bool)
        bwd = np.zeros(mask.shape, dtype=bool)
        for k in range(1, radius + 1):
            fwd |= _shift(mask, k * ay, k * ax)
            bwd |= _shift(mask, -k * ay, -k * ax)
        enclosed |= fwd & bwd
    return enclosed


def classify_holes(mask, radius=3, min_valid=2):
    """Label each pixel of a validity mask.

    Valid pixels are VISIBLE. An invalid pixel is STRETCH when at least
    ``min_valid`` valid pixels lie within Chebyshev distance ``radius`` and
    those neighbors enclose it: along a row, column or diagonal there is a
    valid pixel on each side within ``radius``. Everything else is
    OUT_OF_VIEW. The enclosure test keeps the band just outside the field
    of view from counting as stretch. Horizontal neighborhoods wrap.
    """
    mask = np.asarray(mask, dtype=bool)
    count = _window_count(mask, radius)
    out = np.full(mask.shape, OUT_OF_VIEW, dtype=np.uint8)
    out[(count >= min_valid) & _enclosed(mask, radius)] = STRETCH
    out[mask] = VISIBLE
    return out


def hole_image(hole_class):
    """Hole labels as a gray image in [0, 1] (0 visible, 128 stretch, 255 out of view)."""
    lut = np.zeros(3, dtype=np.float32)
    for k, level in HOLE_LEVELS.items():
        lut[k] = level / 255.0
    return lut[hole_class]
