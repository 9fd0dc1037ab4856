"""PanoTransformer: patch tokens over a 4-channel cubemap, pre-norm transformer
blocks, per-token de-embedding back to image features and a residual
refinement head.

Input layout is ``(B, n_faces, h, w, 4)`` (RGB + validity mask). In
cubemap mode ``n_faces = 6`` and ``h = w = face_size``; the equirect
ablation uses a single ``2F x 4F`` "face" holding the panorama itself.
"""
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn

N_RESIDUAL = 6


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    face_size: int = 32
    patch_size: int = 8
    embed_dim: int = 128
    n_heads: int = 4
    n_blocks: int = 4
    refine_channels: int = 32
    mlp_ratio: int = 4
    projection: str = "cubemap"

    def __post_init__(self):
        if self.projection not in ("cubemap", "equirect"):
            raise ConfigError(f"projection must be 'cubemap' or 'equirect', got {self.projection!r}")
        h, w = self.grid[1:]
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(f"face size {h}x{w} is not a multiple of patch size {self.patch_size}")
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.n_blocks < 1:
            raise ConfigError("need at least one transformer block")

    @property
    def grid(self):
        """``(n_faces, h, w)`` of the model input."""
        F = self.face_size
        return (6, F, F) if self.projection == "cubemap" else (1, 2 * F, 4 * F)

    @property
    def pano_size(self):
        """``(height, width)`` of the equirect panorama the model works with."""
        return 2 * self.face_size, 4 * self.face_size

    @property
    def n_tokens(self):
        nf, h, w = self.grid
        return nf * h * w // self.patch_size ** 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in names:
                raise ConfigError(f"unknown model config key {k!r}")
            kw[k] = v if k == "projection" else int(v)
        return cls(**kw)


def patchify(x, p):
    """``(B, nf, h, w, c)`` -> ``(B, N, p*p*c)``.

    Token order: face, then patch row, then patch column; within a patch,
    pixel row, pixel column, channel (innermost).
    """
    B, nf, h, w, c = x.shape
    if h % p or w % p:
        raise ConfigError(f"face {h}x{w} not divisible by patch size {p}")
    t = x.reshape(B, nf, h // p, p, w // p, p, c).transpose(0, 1, 2, 4, 3, 5, 6)
    return t.reshape(B, nf * (h // p) * (w // p), p * p * c)


def unpatchify(tokens, grid, p):
    """Inverse of :func:`patchify` for tokens of width ``p*p*c``."""
    nf, h, w = grid
    B, N, D = tokens.shape
    c = D // (p * p)
    t = tokens.reshape(B, nf, h // p, w // p, p, p, c).transpose(0, 1, 2, 4, 3, 5, 6)
    return t.reshape(B, nf, h, w, c)


def init_params(cfg, seed=0, dtype=np.float32):
    """Initial parameters.

    Linear projections and embeddings are truncated normal with std 0.02,
    biases are zero and LayerNorm scales one. Convolutions use He-normal
    weights, except the second conv of each residual block which starts at
    zero so every block is initially the identity.
    """
    rng = np.random.default_rng(seed)
    d, p, C = cfg.embed_dim, cfg.patch_size, cfg.refine_channels
    hid = cfg.mlp_ratio * d
    tn = lambda *shape: nn.trunc_normal(rng, shape, 0.02, dtype)  # noqa: E731
    zeros = lambda *shape: np.zeros(shape, dtype)  # noqa: E731
    params = {
        "embed.w": tn(p * p * 4, d), "embed.b": zeros(d),
        "pos": tn(cfg.n_tokens, d),
    }
    for i in range(cfg.n_blocks):
        params.update({
            f"block{i}.ln1.g": np.ones(d, dtype), f"block{i}.ln1.b": zeros(d),
            f"block{i}.attn.qkv.w": tn(d, 3 * d), f"block{i}.attn.qkv.b": zeros(3 * d),
            f"block{i}.attn.out.w": tn(d, d), f"block{i}.attn.out.b": zeros(d),
            f"block{i}.ln2.g": np.ones(d, dtype), f"block{i}.ln2.b": zeros(d),
            f"block{i}.mlp.fc1.w": tn(d, hid), f"block{i}.mlp.fc1.b": zeros(hid),
            f"block{i}.mlp.fc2.w": tn(hid, d), f"block{i}.mlp.fc2.b": zeros(d),
        })
    params["norm.g"] = np.ones(d, dtype)
    params["norm.b"] = zeros(d)
    params["deembed.w"] = tn(d, p * p * C)
    params["deembed.b"] = zeros(p * p * C)
    for j in range(N_RESIDUAL):
        params[f"res{j}.conv1.w"] = nn.trunc_normal(rng, (3, 3, C, C), np.sqrt(2.0 / (9 * C)), dtype)
        params[f"res{j}.conv1.b"] = zeros(C)
        params[f"res{j}.conv2.w"] = zeros(3, 3, C, C)
        params[f"res{j}.conv2.b"] = zeros(C)
    params["out.w"] = nn.trunc_normal(rng, (C, 3), np.sqrt(1.0 / C), dtype)
    params["out.b"] = zeros(3)
    return params


def param_group(name):
    """Coarse parameter family, used by the gradient checks."""
    if name.startswith(("embed", "pos")):
        return "embedding"
    if ".attn." in name:
        return "attention"
    if ".mlp." in name:
        return "mlp"
    if ".ln" in name:
        return "layernorm"
    if name.startswith(("deembed", "norm")):
        return "deembed"
    return "conv"


def transformer_block_forward(z, params, i, n_heads):
    """One pre-norm block: ``w = MHSA(LN(z)) + z``, ``z' = MLP(LN(w)) + w``."""
    P = lambda k: params[f"block{i}.{k}"]  # noqa: E731
    a, c_ln1 = nn.layernorm_forward(z, P("ln1.g"), P("ln1.b"))
    m, c_attn = nn.mhsa_forward(a, P("attn.qkv.w"), P("attn.qkv.b"), P("attn.out.w"),
                                P("attn.out.b"), n_heads)
    w = z + m
    b, c_ln2 = nn.layernorm_forward(w, P("ln2.g"), P("ln2.b"))
    h1, c_fc1 = nn.linear_forward(b, P("mlp.fc1.w"), P("mlp.fc1.b"))
    g, c_gelu = nn.gelu_forward(h1)
    h2, c_fc2 = nn.linear_forward(g, P("mlp.fc2.w"), P("mlp.fc2.b"))
    return w + h2, (c_ln1, c_attn, c_ln2, c_fc1, c_gelu, c_fc2)


def transformer_block_backward(cache, dz_out, params, i, grads):
    c_ln1, c_attn, c_ln2, c_fc1, c_gelu, c_fc2 = cache
    pre = f"block{i}."
    dw = dz_out
    dg, grads[pre + "mlp.fc2.w"], grads[pre + "mlp.fc2.b"] = nn.linear_backward(
        c_fc2, dz_out, params[pre + "mlp.fc2.w"])
    dh1 = nn.gelu_backward(c_gelu, dg)
    db, grads[pre + "mlp.fc1.w"], grads[pre + "mlp.fc1.b"] = nn.linear_backward(
        c_fc1, dh1, params[pre + "mlp.fc1.w"])
    dw_ln, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = nn.layernorm_backward(c_ln2, db)
    dw = dw + dw_ln
    da, dqkv_w, dqkv_b, dout_w, dout_b = nn.mhsa_backward(c_attn, dw)
    grads[pre + "attn.qkv.w"], grads[pre + "attn.qkv.b"] = dqkv_w, dqkv_b
    grads[pre + "attn.out.w"], grads[pre + "attn.out.b"] = dout_w, dout_b
    dz, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = nn.layernorm_backward(c_ln1, da)
    return dz + dw


def residual_refine_forward(feat, params):
    """Six per-face residual blocks, then a 1x1 conv and a sigmoid.

    ``feat`` is ``(M, h, w, C)`` with faces folded into ``M``.
    """
    x = feat
    caches = []
    for j in range(N_RESIDUAL):
        h1, c1 = nn.conv2d_forward(x, params[f"res{j}.conv1.w"], params[f"res{j}.conv1.b"])
        r = np.maximum(h1, 0)
        h2, c2 = nn.conv2d_forward(r, params[f"res{j}.conv2.w"], params[f"res{j}.conv2.b"])
        caches.append((c1, h1 > 0, c2))
        x = x + h2
    logits, c_out = nn.linear_forward(x, params["out.w"], params["out.b"])
    y = nn.sigmoid(logits)
    return y, (caches, c_out, y)


def residual_refine_backward(cache, dy, params, grads):
    caches, c_out, y = cache
    dlogits = dy * y * (1 - y)
    dx, grads["out.w"], grads["out.b"] = nn.linear_backward(c_out, dlogits, params["out.w"])
    for j in reversed(range(N_RESIDUAL)):
        c1, relu_mask, c2 = caches[j]
        dr, grads[f"res{j}.conv2.w"], grads[f"res{j}.conv2.b"] = nn.conv2d_backward(c2, dx)
        dh1 = dr * relu_mask
        dxi, grads[f"res{j}.conv1.w"], grads[f"res{j}.conv1.b"] = nn.conv2d_backward(c1, dh1)
        dx = dx + dxi
    return dx


class PanoTransformer:
    """Parameters plus forward / backward for one model configuration."""

    def __init__(self, config=None, params=None, seed=0, dtype=np.float32):
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_params(self.config, seed, dtype)

    def astype(self, dtype):
        return PanoTransformer(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def embed(self, x):
        cfg, P = self.config, self.params
        patches = patchify(x, cfg.patch_size)
        z, c = nn.linear_forward(patches, P["embed.w"], P["embed.b"])
        return z + P["pos"], c

    def encode(self, x, upto=None):
        """Token sequences after every block; ``upto`` stops early."""
        z, _ = self.embed(x)
        n = self.config.n_blocks if upto is None else upto
        for i in range(n):
            z, _ = transformer_block_forward(z, self.params, i, self.config.n_heads)
        return z

    def forward(self, x, keep_cache=False):
        """``x`` (B, nf, h, w, 4) -> RGB in [0, 1] of shape (B, nf, h, w, 3)."""
        cfg, P = self.config, self.params
        x = np.asarray(x, dtype=P["embed.w"].dtype)
        if x.ndim == 4:
            x = x[None]
        if x.shape[1:] != cfg.grid + (4,):
            raise ConfigError(f"expected input (B,) + {cfg.grid + (4,)}, got {x.shape}")
        z, c_embed = self.embed(x)
        block_caches = []
        for i in range(cfg.n_blocks):
            z, c = transformer_block_forward(z, P, i, cfg.n_heads)
            block_caches.append(c)
        zn, c_norm = nn.layernorm_forward(z, P["norm.g"], P["norm.b"])
        f, c_de = nn.linear_forward(zn, P["deembed.w"], P["deembed.b"])
        feat = unpatchify(f, cfg.grid, cfg.patch_size)
        B, nf, h, w, C = feat.shape
        y, c_ref = residual_refine_forward(feat.reshape(B * nf, h, w, C), P)
        y = y.reshape(B, nf, h, w, 3)
        if not keep_cache:
            return y
        return y, (c_embed, block_caches, c_norm, c_de, c_ref, feat.shape)

    def backward(self, cache, dy):
        """Gradients of every parameter given ``dL/dy``."""
        cfg, P = self.config, self.params
        c_embed, block_caches, c_norm, c_de, c_ref, fshape = cache
        B, nf, h, w, C = fshape
        grads = {}
        dfeat = residual_refine_backward(c_ref, dy.reshape(B * nf, h, w, 3), P, grads)
        df = patchify(dfeat.reshape(fshape), cfg.patch_size)
        dzn, grads["deembed.w"], grads["deembed.b"] = nn.linear_backward(c_de, df, P["deembed.w"])
        dz, grads["norm.g"], grads["norm.b"] = nn.layernorm_backward(c_norm, dzn)
        for i in reversed(range(cfg.n_blocks)):
            dz = transformer_block_backward(block_caches[i], dz, P, i, grads)
        grads["pos"] = dz.sum(axis=0)
        _, grads["embed.w"], grads["embed.b"] = nn.linear_backward(c_embed, dz, P["embed.w"])
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {k}")
        return grads

    def attention(self, x, block):
        """Head-averaged ``(B, N, N)`` attention of block ``block``, numbered from 1."""
        cfg = self.config
        if not 1 <= block <= cfg.n_blocks:
            raise IndexError(f"block {block} out of range 1..{cfg.n_blocks}")
        x = np.asarray(x, dtype=self.params["embed.w"].dtype)
        if x.ndim == 4:
            x = x[None]
        z = self.encode(x, upto=block - 1)
        P = lambda k: self.params[f"block{block - 1}.{k}"]  # noqa: E731
        a, _ = nn.layernorm_forward(z, P("ln1.g"), P("ln1.b"))
        _, cache = nn.mhsa_forward(a, P("attn.qkv.w"), P("attn.qkv.b"), P("attn.out.w"),
                                   P("attn.out.b"), cfg.n_heads)
        return cache[4].mean(axis=1)

    def n_parameters(self):
        return int(sum(v.size for v in self.params.values()))
