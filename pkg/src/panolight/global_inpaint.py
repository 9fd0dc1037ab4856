"""Glue between equirect panoramas and the transformer: input assembly,
output resampling, mask compositing and the reconstruction-loss step."""
from functools import lru_cache

import numpy as np

from .geometry import c2e_operator, e2c_operator
from .losses import reverse_huber, reverse_huber_grad


def composite(pano, mask, pred):
    """Keep observed pixels of ``pano`` and take ``pred`` elsewhere.

    ``mask`` is ``(..., H, W)`` bool; images are ``(..., H, W, 3)``.
    Selection is exact: no blending arithmetic touches either input.
    """
    pano = np.asarray(pano)
    pred = np.asarray(pred)
    mask = np.asarray(mask, dtype=bool)
    if pano.shape != pred.shape or mask.shape != pano.shape[:-1]:
        raise ValueError(f"composite: shapes {pano.shape}, {mask.shape}, {pred.shape} disagree")
    return np.where(mask[..., None], pano, pred)


@lru_cache(maxsize=16)
def _ops(face_size, width, height, dtype):
    e2c, nearest = e2c_operator(width, height, face_size)
    c2e, _ = c2e_operator(face_size, width, height)
    dt = np.dtype(dtype)
    return e2c.astype(dt), nearest, c2e.astype(dt).tocsr(), c2e.T.astype(dt).tocsr()


def model_input(panos, masks, cfg, dtype=np.float32):
    """Stack RGB panoramas and masks into ``(B,) + cfg.grid + (4,)`` model input.

    Invalid pixels are zeroed before resampling so unobserved content never
    leaks into the tokens.
    """
    panos = np.asarray(panos, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if panos.ndim == 3:
        panos, masks = panos[None], masks[None]
    B, H, W, _ = panos.shape
    if (H, W) != cfg.pano_size:
        raise ValueError(f"panorama {W}x{H} does not match model size {cfg.pano_size[::-1]}")
    clean = panos * masks[..., None]
    if cfg.projection == "equirect":
        x = np.concatenate([clean, masks[..., None]], axis=-1)[:, None]
        return x.astype(dtype)
    F = cfg.face_size
    e2c, nearest, _, _ = _ops(F, W, H, np.dtype(np.float64).str)
    rgb = e2c @ clean.transpose(1, 2, 0, 3).reshape(H * W, B * 3)
    rgb = rgb.reshape(6, F, F, B, 3).transpose(3, 0, 1, 2, 4)
    m = masks.reshape(B, H * W)[:, nearest].reshape(B, 6, F, F, 1).astype(np.float64)
    return np.concatenate([rgb, m], axis=-1).astype(dtype)


def output_to_pano(y, cfg):
    """Model output ``(B,) + grid + (3,)`` -> equirect ``(B, H, W, 3)``."""
    B = y.shape[0]
    H, W = cfg.pano_size
    if cfg.projection == "equirect":
        return y[:, 0]
    F = cfg.face_size
    _, _, c2e, _ = _ops(F, W, H, y.dtype.str)
    flat = y.reshape(B, 6 * F * F, 3).transpose(1, 0, 2).reshape(6 * F * F, B * 3)
    return (c2e @ flat).reshape(H, W, B, 3).transpose(2, 0, 1, 3)


def pano_grad_to_output(dpano, cfg):
    """Adjoint of :func:`output_to_pano`."""
    B, H, W, _ = dpano.shape
    if cfg.projection == "equirect":
        return dpano[:, None]
    F = cfg.face_size
    _, _, _, c2e_t = _ops(F, W, H, dpano.dtype.str)
    flat = dpano.transpose(1, 2, 0, 3).reshape(H * W, B * 3)
    return (c2e_t @ flat).reshape(6, F, F, B, 3).transpose(3, 0, 1, 2, 4)


def predict(model, panos, masks):
    """Composited global inpainting ``P_G`` for equirect inputs."""
    panos = np.asarray(panos)
    single = panos.ndim == 3
    masks = np.asarray(masks, dtype=bool)
    if single:
        panos, masks = panos[None], masks[None]
    x = model_input(panos, masks, model.config, model.params["embed.w"].dtype)
    pred = output_to_pano(model.forward(x), model.config)
    out = composite(panos.astype(pred.dtype), masks, pred)
    return out[0] if single else out


def reconstruction_step(model, x, panos, masks, targets, T=0.2, backward=True):
    """Forward, composite, berHu loss and (optionally) gradients.

    Returns ``(loss, grads, composited)``; ``grads`` is None when
    ``backward`` is false. ``x`` is the prebuilt model input.
    """
    cfg = model.config
    dtype = model.params["embed.w"].dtype
    y, cache = model.forward(x, keep_cache=True)
    pred = output_to_pano(y, cfg)
    pg = composite(np.asarray(panos, dtype=dtype), masks, pred)
    loss = reverse_huber(pg, targets, T)
    if not backward:
        return loss, None, pg
    dpg = reverse_huber_grad(pg, np.asarray(targets, dtype=dtype), T)
    dpred = np.where(np.asarray(masks, dtype=bool)[..., None], 0, dpg).astype(dtype)
    grads = model.backward(cache, pano_grad_to_output(dpred, cfg))
    return loss, grads, pg
