"""Layer primitives with explicit forward and backward passes (NHWC / token-major).

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the cache and the upstream gradient and returns the input gradient
followed by the parameter gradients.
"""
import math

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal samples redrawn until they fall within two standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2
    while np.any(bad):
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2
    return (z * std).astype(dtype)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(x, dy, w):
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def layernorm_forward(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layernorm_backward(cache, dy):
    xhat, rstd, g = cache
    flat = dy.reshape(-1, dy.shape[-1])
    dg = (flat * xhat.reshape(flat.shape)).sum(axis=0)
    db = flat.sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def gelu_forward(x):
    inner = GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    return 0.5 * x * (1 + t), (x, t)


def gelu_backward(cache, dy):
    x, t = cache
    dinner = GELU_C * (1 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def mhsa_forward(x, wqkv, bqkv, wo, bo, n_heads):
    """Multi-head scaled dot-product self-attention over tokens ``x`` (B, N, d)."""
    B, N, d = x.shape
    dh = d // n_heads
    qkv = (x @ wqkv + bqkv).reshape(B, N, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    attn = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, d)
    out = o @ wo + bo
    return out, (x, q, k, v, attn, o, scale, wqkv, wo)


def mhsa_backward(cache, dy):
    x, q, k, v, attn, o, scale, wqkv, wo = cache
    B, N, d = x.shape
    n_heads, dh = q.shape[1], q.shape[3]
    do, dwo, dbo = linear_backward(o, dy, wo)
    do = do.reshape(B, N, n_heads, dh).transpose(0, 2, 1, 3)
    dattn = do @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ do
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, N, 3 * d)
    dx, dwqkv, dbqkv = linear_backward(x, dqkv, wqkv)
    return dx, dwqkv, dbqkv, dwo, dbo


def conv_output_size(n, kernel, stride, pad):
    return (n + 2 * pad - kernel) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    M, H, W, C = x.shape
    oh = conv_output_size(H, kh, stride, pad)
    ow = conv_output_size(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = np.empty((M, oh, ow, kh * kw * C), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            j = (ky * kw + kx) * C
            cols[..., j:j + C] = xp[:, ky:ky + stride * (oh - 1) + 1:stride,
                                    kx:kx + stride * (ow - 1) + 1:stride, :]
    return cols


def _shift_conv_forward(x, w, b):
    """3x3 / stride 1 / pad 1 convolution as nine contiguous matmuls.

    On the zero-padded grid flattened to rows, tap ``(ky, kx)`` is a fixed
    row offset, so each tap is one GEMM over a contiguous slice. Outputs are
    computed on the padded layout and the valid window is cropped out.
    """
    M, H, W, C = x.shape
    cout = w.shape[3]
    Wp = W + 2
    xp = np.zeros((M, H + 2, Wp, C), dtype=x.dtype)
    xp[:, 1:H + 1, 1:W + 1] = x
    flat = xp.reshape(-1, C)
    L = flat.shape[0] - 2 * Wp - 2
    acc = np.zeros((flat.shape[0], cout), dtype=np.result_type(x, w))
    for ky in range(3):
        for kx in range(3):
            off = ky * Wp + kx
            acc[:L] += flat[off:off + L] @ w[ky, kx]
    out = acc.reshape(M, H + 2, Wp, cout)[:, :H, :W] + b
    return out


def _shift_conv_backward(x, w, dy):
    M, H, W, C = x.shape
    cout = w.shape[3]
    Wp = W + 2
    xp = np.zeros((M, H + 2, Wp, C), dtype=x.dtype)
    xp[:, 1:H + 1, 1:W + 1] = x
    flat = xp.reshape(-1, C)
    L = flat.shape[0] - 2 * Wp - 2
    dacc = np.zeros((M, H + 2, Wp, cout), dtype=dy.dtype)
    dacc[:, :H, :W] = dy
    dflat = dacc.reshape(-1, cout)[:L]
    dxp = np.zeros_like(flat, dtype=np.result_type(dy, w))
    dw = np.empty(w.shape, dtype=np.result_type(x, dy))
    for ky in range(3):
        for kx in range(3):
            off = ky * Wp + kx
            dw[ky, kx] = flat[off:off + L].T @ dflat
            dxp[off:off + L] += dflat @ w[ky, kx].T
    dx = dxp.reshape(M, H + 2, Wp, C)[:, 1:H + 1, 1:W + 1]
    return dx, dw, dy.reshape(-1, cout).sum(axis=0)


def conv2d_forward(x, w, b, stride=1, pad=None):
    """2-D convolution, ``x`` (M, H, W, Cin), ``w`` (kh, kw, Cin, Cout).

    ``pad`` defaults to ``kh // 2`` (same-size output for stride 1). Zero
    padding.
    """
    kh, kw, cin, cout = w.shape
    if pad is None:
        pad = kh // 2
    if (kh, kw, stride, pad) == (3, 3, 1, 1):
        return _shift_conv_forward(x, w, b), (x, w, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out, (x, w, stride, pad)


def conv2d_backward(cache, dy):
    x, w, stride, pad = cache
    kh, kw, cin, cout = w.shape
    if (kh, kw, stride, pad) == (3, 3, 1, 1):
        return _shift_conv_backward(x, w, dy)
    M, H, W, C = x.shape
    cols = _im2col(x, kh, kw, stride, pad)
    dflat = dy.reshape(-1, cout)
    dw = (cols.reshape(-1, cols.shape[-1]).T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = dy @ w.reshape(kh * kw * cin, cout).T
    oh, ow = dy.shape[1], dy.shape[2]
    dxp = np.zeros((M, H + 2 * pad, W + 2 * pad, C), dtype=dy.dtype)
    for ky in range(kh):
        for kx in range(kw):
            j = (ky * kw + kx) * C
            dxp[:, ky:ky + stride * (oh - 1) + 1:stride,
                kx:kx + stride * (ow - 1) + 1:stride, :] += dcols[..., j:j + C]
    dx = dxp[:, pad:pad + H, pad:pad + W, :] if pad else dxp
    return dx, dw, db


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)
