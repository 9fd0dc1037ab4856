"""Input checks shared by the pipeline stages and estimators."""
import numpy as np


def check_image(img, name="image", channels=(3,), ldr=True):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in channels:
        raise ValueError(f"{name} must have shape (H, W, C) with C in {channels}, got {img.shape}")
    img = img.astype(np.float32, copy=False)
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    if ldr and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return img


def check_depth(depth, shape=None, name="depth"):
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim == 3 and depth.shape[2] == 1:
        depth = depth[:, :, 0]
    if depth.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {depth.shape}")
    if shape is not None and depth.shape != tuple(shape):
        raise ValueError(f"{name} shape {depth.shape} does not match {tuple(shape)}")
    return depth


def check_mask(mask, shape, name="mask"):
    mask = np.asarray(mask)
    if mask.ndim == 3 and mask.shape[2] == 1:
        mask = mask[:, :, 0]
    if mask.shape != tuple(shape):
        raise ValueError(f"{name} shape {mask.shape} does not match {tuple(shape)}")
    return mask.astype(bool, copy=False)


def check_equirect(img, name="panorama"):
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[1] != 2 * img.shape[0]:
        raise ValueError(f"{name} must be a 2:1 equirect image, got {img.shape}")
    return img


def check_locale(locale):
    r = np.asarray(locale, dtype=np.float64).reshape(-1)
    if r.shape != (3,) or not np.all(np.isfinite(r)):
        raise ValueError(f"locale must be 3 finite numbers, got {locale!r}")
    return r
