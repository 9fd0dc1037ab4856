"""PatchGAN-style fully convolutional discriminator.

Four 4x4 stride-2 convolutions (padding 1) with LeakyReLU(0.2), widths
``base, 2*base, 4*base, 8*base``, then a 3x3 stride-1 convolution
(padding 1) to one logit channel. For an input of size ``n`` each stride-2
layer gives ``floor((n - 2) / 2) + 1`` and the last layer keeps the size,
so multiples of 16 map to exactly ``n / 16``. Each logit sees a 78 px
receptive field; the total stride is 16 px.
"""
import numpy as np

from . import nn

N_DOWN = 4
SLOPE = 0.2


def output_size(n):
    for _ in range(N_DOWN):
        n = nn.conv_output_size(n, 4, 2, 1)
    return nn.conv_output_size(n, 3, 1, 1)


def init_disc_params(base=64, in_channels=3, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params = {}
    cin = in_channels
    for i in range(N_DOWN):
        cout = base * 2 ** i
        params[f"d{i}.w"] = nn.trunc_normal(rng, (4, 4, cin, cout), 0.02, dtype)
        params[f"d{i}.b"] = np.zeros(cout, dtype)
        cin = cout
    params["logit.w"] = nn.trunc_normal(rng, (3, 3, cin, 1), 0.02, dtype)
    params["logit.b"] = np.zeros(1, dtype)
    return params


def discriminator_forward(x, params, keep_cache=False):
    """``x`` (B, H, W, 3) -> logits (B, H', W')."""
    x = np.asarray(x, dtype=params["logit.w"].dtype)
    if x.ndim == 3:
        x = x[None]
    h, w = x.shape[1:3]
    if output_size(h) < 1 or output_size(w) < 1:
        raise ValueError(f"input {w}x{h} too small for the discriminator (need >= 16 px)")
    caches = []
    for i in range(N_DOWN):
        pre, c = nn.conv2d_forward(x, params[f"d{i}.w"], params[f"d{i}.b"], stride=2, pad=1)
        x = np.where(pre > 0, pre, SLOPE * pre)
        caches.append((c, pre > 0))
    logits, c = nn.conv2d_forward(x, params["logit.w"], params["logit.b"], stride=1, pad=1)
    logits = logits[..., 0]
    if keep_cache:
        return logits, (caches, c)
    return logits


def discriminator_backward(cache, dlogits, params):
    """Returns ``(dx, grads)`` for upstream ``dL/dlogits``."""
    caches, c = cache
    grads = {}
    dx, grads["logit.w"], grads["logit.b"] = nn.conv2d_backward(c, dlogits[..., None])
    for i in reversed(range(N_DOWN)):
        ci, pos = caches[i]
        dpre = np.where(pos, dx, SLOPE * dx)
        dx, grads[f"d{i}.w"], grads[f"d{i}.b"] = nn.conv2d_backward(ci, dpre)
    return dx, grads
