import numpy as np
import pytest

from panolight import nn
from panolight.gradcheck import gradcheck_case, gradcheck_model
from panolight.transformer import (N_RESIDUAL, ConfigError, ModelConfig, PanoTransformer,
                                   init_params, patchify, residual_refine_forward, unpatchify)


def test_default_token_count():
    cfg = ModelConfig()
    assert cfg.n_tokens == 96
    assert cfg.pano_size == (64, 128)


def test_patchify_roundtrip_and_order(rng):
    x = rng.normal(size=(2, 6, 8, 8, 4))
    t = patchify(x, 4)
    assert t.shape == (2, 24, 64)
    np.testing.assert_array_equal(unpatchify(t, (6, 8, 8), 4), x)
    # token 1 is face 0, patch row 0, patch column 1
    np.testing.assert_array_equal(t[0, 1], x[0, 0, :4, 4:8].reshape(-1))
    # token 4 starts face 1
    np.testing.assert_array_equal(t[0, 4], x[0, 1, :4, :4].reshape(-1))


def test_patchify_rejects_indivisible():
    with pytest.raises(ConfigError):
        patchify(np.zeros((1, 1, 6, 6, 4)), 4)


@pytest.mark.parametrize("kw", [dict(face_size=10, patch_size=4), dict(embed_dim=10, n_heads=3),
                                dict(n_blocks=0), dict(projection="fisheye")])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_config_dict_roundtrip():
    cfg = ModelConfig(face_size=16, patch_size=4, projection="equirect")
    assert ModelConfig.from_dict({k: str(v) for k, v in cfg.to_dict().items()}) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"bogus": 1})


def test_forward_shape_and_range(tiny_cfg, rng):
    m = PanoTransformer(tiny_cfg, seed=0)
    y = m.forward(rng.uniform(size=(3,) + tiny_cfg.grid + (4,)))
    assert y.shape == (3, 6, 8, 8, 3)
    assert y.dtype == np.float32
    assert np.all((y >= 0) & (y <= 1))


def test_equirect_projection(rng):
    cfg = ModelConfig(face_size=8, patch_size=4, embed_dim=16, n_heads=2, n_blocks=1,
                      refine_channels=4, projection="equirect")
    assert cfg.grid == (1, 16, 32)
    assert cfg.n_tokens == 32
    y = PanoTransformer(cfg).forward(rng.uniform(size=(1, 1, 16, 32, 4)))
    assert y.shape == (1, 1, 16, 32, 3)


def test_wrong_input_shape(tiny_cfg):
    with pytest.raises(ConfigError):
        PanoTransformer(tiny_cfg).forward(np.zeros((1, 6, 8, 8, 3)))


def test_zero_conv_weights_give_sigmoid_of_bias(tiny_cfg, rng):
    m = PanoTransformer(tiny_cfg, seed=0)
    m.params["out.w"][...] = 0
    m.params["out.b"][...] = [0.0, 1.0, -2.0]
    y = m.forward(rng.uniform(size=(1,) + tiny_cfg.grid + (4,)))
    np.testing.assert_allclose(y[..., 0], 0.5, atol=1e-7)
    np.testing.assert_allclose(y[..., 1], 1 / (1 + np.exp(-1.0)), atol=1e-6)
    np.testing.assert_allclose(y[..., 2], 1 / (1 + np.exp(2.0)), atol=1e-6)


def test_residual_blocks_start_as_identity(tiny_cfg, rng):
    P = init_params(tiny_cfg, seed=0, dtype=np.float64)
    feat = rng.normal(size=(2, 8, 8, 4))
    y, _ = residual_refine_forward(feat, P)
    np.testing.assert_allclose(y, nn.sigmoid(feat @ P["out.w"] + P["out.b"]), atol=1e-12)


def test_refine_head_receptive_field(tiny_cfg, rng):
    P = init_params(tiny_cfg, seed=0, dtype=np.float64)
    for k in P:
        if k.startswith("res"):
            P[k] = P[k] + rng.normal(0, 0.2, P[k].shape)
    feat = rng.normal(size=(1, 40, 40, 4))
    bumped = feat.copy()
    bumped[0, 20, 20] += 1.0
    diff = np.abs(residual_refine_forward(bumped, P)[0] - residual_refine_forward(feat, P)[0])
    changed = np.argwhere(diff.max(-1)[0] > 0)
    reach = np.abs(changed - 20).max()
    assert reach == 2 * N_RESIDUAL  # twelve 3x3 convs


def test_attention_rows_sum_to_one(tiny_cfg, rng):
    m = PanoTransformer(tiny_cfg, seed=0)
    x = rng.uniform(size=(1,) + tiny_cfg.grid + (4,))
    for b in (1, 2):
        a = m.attention(x, b)
        assert a.shape == (1, 24, 24)
        np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-5)
    with pytest.raises(IndexError):
        m.attention(x, 0)
    with pytest.raises(IndexError):
        m.attention(x, 3)


def test_blocks_are_permutation_equivariant_without_position(tiny_cfg, rng):
    from panolight.transformer import transformer_block_forward
    P = init_params(tiny_cfg, seed=0, dtype=np.float64)
    z = rng.normal(size=(1, 24, 16))
    perm = rng.permutation(24)
    a, _ = transformer_block_forward(z, P, 0, 2)
    b, _ = transformer_block_forward(z[:, perm], P, 0, 2)
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


def test_gradients_match_finite_differences(tiny_cfg):
    model, panos, masks, targets = gradcheck_case(tiny_cfg, seed=3)
    groups, _, _ = gradcheck_model(model, panos, masks, targets, samples=4)
    assert set(groups) == {"embedding", "attention", "mlp", "layernorm", "deembed", "conv"}
    assert max(groups.values()) < 1e-4


def test_float64_model_and_astype(tiny_cfg):
    m = PanoTransformer(tiny_cfg, dtype=np.float64)
    assert m.params["embed.w"].dtype == np.float64
    m32 = m.astype(np.float32)
    assert m32.params["pos"].dtype == np.float32
    assert m.n_parameters() == m32.n_parameters()
