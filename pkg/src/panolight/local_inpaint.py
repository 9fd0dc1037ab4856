"""Depth-guided local inpainting of pixel-stretching holes.

Three stages on the warped panorama:

1. grey-level morphological closing of the warped depth,
2. a depth-relative bilateral filter over the recovered depth,
3. reprojection of each recovered depth sample into the source view and a
   depth-consistency test before copying the source color.

All filters run on the equirect grid with horizontal wrap-around.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import equirect_pixel_dirs, project
from .imageio import bilinear_sample
from .warp import STRETCH, VISIBLE, classify_holes


@dataclass
class LocalInpaintConfig:
    closing_kernel: int = 5
    bilateral_radius: int = 4
    sigma_spatial: float = 2.0
    sigma_range: float = 0.1
    t_rel: float = 0.05
    # only pixels labeled STRETCH are candidates for filling
    stretch_only: bool = True

    def __post_init__(self):
        if self.closing_kernel < 1 or self.closing_kernel % 2 == 0:
            raise ValueError("closing_kernel must be a positive odd integer")
        for name in ("bilateral_radius", "sigma_spatial", "sigma_range", "t_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _wrap_filter(fn, img, size, fill):
    r = size // 2
    padded = np.pad(img, ((0, 0), (r, r)), mode="wrap")
    out = fn(padded, size=size, mode="constant", cval=fill)
    return out[:, r:-r] if r else out


def close_depth(depth, mask, kernel=5):
    """Grey closing of the depth map with a ``kernel x kernel`` square.

    Invalid pixels act as -inf during dilation, so a hole only receives a
    value when valid depth surrounds it closely enough. Originally valid
    pixels keep their values. Returns ``(depth, mask)``.
    """
    mask = np.asarray(mask, dtype=bool)
    f = np.where(mask, np.asarray(depth, dtype=np.float64), -np.inf)
    dil = _wrap_filter(ndimage.maximum_filter, f, kernel, -np.inf)
    closed = _wrap_filter(ndimage.minimum_filter, dil, kernel, np.inf)
    new_mask = mask | np.isfinite(closed)
    out = np.where(mask, f, np.where(np.isfinite(closed), closed, 0.0))
    return out.astype(np.float32), new_mask


def bilateral_depth(depth, mask, radius=4, sigma_spatial=2.0, sigma_range=0.1, protect=None):
    """Edge-preserving smoothing of valid depth.

    The range kernel uses depth differences relative to the center depth,
    ``exp(-((d - d_c) / d_c)^2 / (2 sigma_range^2))``. Invalid pixels are
    left untouched and never contribute. Pixels in ``protect`` keep their
    input values.
    """
    mask = np.asarray(mask, dtype=bool)
    d = np.where(mask, np.asarray(depth, dtype=np.float64), 0.0)
    h, w = d.shape
    dp = np.pad(d, ((radius, radius), (0, 0)))
    mp = np.pad(mask, ((radius, radius), (0, 0)))
    dp = np.pad(dp, ((0, 0), (radius, radius)), mode="wrap")
    mp = np.pad(mp, ((0, 0), (radius, radius)), mode="wrap")
    center = np.where(mask, d, 1.0)
    num = np.zeros_like(d)
    den = np.zeros_like(d)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            nd = dp[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            nm = mp[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            ws = np.exp(-(dx * dx + dy * dy) / (2 * sigma_spatial ** 2))
            wr = np.exp(-((nd - center) / center) ** 2 / (2 * sigma_range ** 2))
            wt = np.where(nm, ws * wr, 0.0)
            num += wt * nd
            den += wt
    out = np.where(mask, num / np.where(den > 0, den, 1.0), d)
    if protect is not None:
        out = np.where(protect, d, out)
    return out.astype(np.float32)


def depth_guided_fill(pano, mask, depth_rec, mask_rec, image, depth, K, locale, t_rel=0.05,
                      candidates=None):
    """Fill invalid panorama pixels from the source image using recovered depth.

    For each candidate pixel with recovered distance ``d`` the world point
    ``R + d * dir`` is projected into the source camera. The pixel is filled
    (bilinear color from ``image``) only if the projection lands inside the
    image and the source depth at that texel agrees with the point's camera
    depth to within ``t_rel`` relative. Visible pixels are never modified.
    Returns ``(P_L, mask_L)``.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    todo = (~mask) & np.asarray(mask_rec, dtype=bool)
    if candidates is not None:
        todo &= candidates
    out = np.array(pano, dtype=np.float32, copy=True)
    out_mask = mask.copy()
    if not np.any(todo):
        return out, out_mask
    rows, cols = np.nonzero(todo)
    dirs = equirect_pixel_dirs(w, h)[rows, cols]
    d = np.asarray(depth_rec, dtype=np.float64)[rows, cols]
    pts = np.asarray(locale, dtype=np.float64) + d[:, None] * dirs
    px, py, zc = project(pts, K, check=False)
    inside = np.isfinite(zc) & (px >= 0) & (px < K.width) & (py >= 0) & (py < K.height)
    ix = np.clip(np.floor(np.nan_to_num(px)).astype(np.int64), 0, K.width - 1)
    iy = np.clip(np.floor(np.nan_to_num(py)).astype(np.int64), 0, K.height - 1)
    d_src = np.asarray(depth, dtype=np.float64)[iy, ix]
    with np.errstate(invalid="ignore"):
        ok = inside & np.isfinite(d_src) & (d_src > 0) & (np.abs(d_src - zc) < t_rel * zc)
    rows, cols = rows[ok], cols[ok]
    out[rows, cols] = bilinear_sample(image, px[ok], py[ok]).astype(np.float32)
    out_mask[rows, cols] = True
    return out, out_mask


@dataclass
class LocalInpaintResult:
    pano: np.ndarray
    mask: np.ndarray
    depth: np.ndarray
    depth_mask: np.ndarray

    @property
    def hole_class(self):
        return classify_holes(self.mask)


def local_inpaint(warp, image=None, depth=None, K=None, locale=None, config=None):
    """Run closing, bilateral filtering and depth-guided filling on a warp result.

    The source view defaults to the one stored on ``warp``.
    """
    cfg = config or LocalInpaintConfig()
    image = warp.image if image is None else image
    depth = warp.source_depth if depth is None else depth
    K = warp.intrinsics if K is None else K
    locale = warp.locale if locale is None else locale

    d_closed, m_closed = close_depth(warp.depth, warp.mask, cfg.closing_kernel)
    d_rec = bilateral_depth(d_closed, m_closed, cfg.bilateral_radius, cfg.sigma_spatial,
                            cfg.sigma_range, protect=warp.mask)
    candidates = None
    if cfg.stretch_only:
        candidates = (warp.hole_class == STRETCH) | (warp.hole_class == VISIBLE)
    pano, mask = depth_guided_fill(warp.pano, warp.mask, d_rec, m_closed, image, depth, K,
                                   locale, cfg.t_rel, candidates=candidates)
    return LocalInpaintResult(pano, mask, d_rec, m_closed)
