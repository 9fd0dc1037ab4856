import numpy as np
import pytest

from panolight import discriminator as disc
from panolight.gradcheck import numerical_grad, relative_error


@pytest.mark.parametrize("n,expected", [(16, 1), (32, 2), (64, 4), (128, 8), (20, 1)])
def test_output_size(n, expected):
    assert disc.output_size(n) == expected


def test_logit_map_shape():
    p = disc.init_disc_params(4, seed=0)
    out = disc.discriminator_forward(np.zeros((2, 32, 64, 3), np.float32), p)
    assert out.shape == (2, 2, 4)


def test_zero_weights_give_bias():
    p = disc.init_disc_params(4, seed=0)
    for k in p:
        p[k][...] = 0
    p["logit.b"][...] = 0.7
    out = disc.discriminator_forward(np.random.default_rng(0).uniform(size=(1, 32, 32, 3)), p)
    np.testing.assert_allclose(out, 0.7, atol=1e-7)


def test_shift_by_total_stride_shifts_logits(rng):
    p = disc.init_disc_params(4, seed=1, dtype=np.float64)
    x = rng.uniform(size=(1, 64, 96, 3))
    # zero border keeps the padding identical under the shift
    x[:, :, :24] = 0
    x[:, :, -24:] = 0
    a = disc.discriminator_forward(x, p)
    b = disc.discriminator_forward(np.roll(x, 16, axis=2), p)
    np.testing.assert_allclose(b[..., 2:-1], a[..., 1:-2], atol=1e-12)


def test_too_small_input():
    p = disc.init_disc_params(4)
    with pytest.raises(ValueError, match="too small"):
        disc.discriminator_forward(np.zeros((1, 8, 32, 3)), p)


def test_backward_matches_fd(rng):
    p = disc.init_disc_params(2, seed=2, dtype=np.float64)
    for v in p.values():
        v += rng.normal(0, 0.2, v.shape)
    x = rng.uniform(size=(1, 32, 32, 3))
    up = rng.normal(size=(1, 2, 2))
    logits, cache = disc.discriminator_forward(x, p, keep_cache=True)
    dx, grads = disc.discriminator_backward(cache, up, p)
    loss = lambda: float((disc.discriminator_forward(x, p) * up).sum())  # noqa: E731
    idx = rng.choice(x.size, 10, replace=False)
    assert relative_error(dx.reshape(-1)[idx], numerical_grad(loss, x, idx, 1e-6)) < 1e-6
    for k in ("d0.w", "d3.b", "logit.w"):
        idx = rng.choice(p[k].size, min(8, p[k].size), replace=False)
        num = numerical_grad(loss, p[k], idx, 1e-6)
        assert relative_error(grads[k].reshape(-1)[idx], num) < 1e-6
