"""Attention-map dumps: the head-averaged token-to-token matrix of one block
and one query token's attention laid back onto the image layout."""
import os

import numpy as np

from .geometry import cubemap_atlas, cubemap_to_equirect
from .imageio import save_pfm, save_png


def query_map(row, cfg):
    """Per-token weights ``(N,)`` -> per-texel map on the model grid ``(nf, h, w)``."""
    nf, h, w = cfg.grid
    p = cfg.patch_size
    grid = np.asarray(row).reshape(nf, h // p, w // p)
    return np.repeat(np.repeat(grid, p, axis=1), p, axis=2)


def attention_dump(model, x, block, out_dir=None, query=0):
    """Attention of ``block`` (numbered from 1) for a single model input ``x``.

    Returns a dict with the ``(N, N)`` matrix, the query row re-imaged on
    the model grid and on the equirect panorama. With ``out_dir`` these are
    written as ``attention_block{b}.pfm`` (matrix), ``query{q}_equirect.png``
    and, in cubemap mode, ``query{q}_atlas.png``; images are scaled by their
    maximum.
    """
    cfg = model.config
    A = model.attention(x, block)[0].astype(np.float64)
    if not 0 <= query < A.shape[0]:
        raise IndexError(f"query token {query} out of range 0..{A.shape[0] - 1}")
    qmap = query_map(A[query], cfg)
    H, W = cfg.pano_size
    if cfg.projection == "cubemap":
        pano = cubemap_to_equirect(qmap, W, H)
    else:
        pano = qmap[0]
    out = {"matrix": A, "query_map": qmap, "query_equirect": pano,
           "self_score": float(A[query, query])}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_pfm(os.path.join(out_dir, f"attention_block{block}.pfm"), A.astype(np.float32))
        scale = max(float(qmap.max()), 1e-12)
        save_png(os.path.join(out_dir, f"query{query}_equirect.png"), pano / scale)
        if cfg.projection == "cubemap":
            save_png(os.path.join(out_dir, f"query{query}_atlas.png"), cubemap_atlas(qmap) / scale)
    return out
