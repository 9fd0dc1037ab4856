import numpy as np
import pytest

from panolight.checkpoint import (CheckpointError, load_checkpoint, parse_config, read_config,
                                  save_checkpoint, write_config)
from panolight.dataset import (MaskPool, densify, irregular_mask, load_dataset, make_dataset,
                               make_training_pair, save_dataset)


@pytest.fixture(scope="module")
def small_set():
    return make_dataset(4, 32, 64, seed=0)


def test_make_dataset_shapes_and_determinism(small_set):
    panos, masks = small_set
    assert len(panos) == len(masks) == 4
    assert panos[0].shape == (32, 64, 3) and panos[0].dtype == np.float32
    assert masks[0].shape == (32, 64) and masks[0].dtype == bool
    p2, m2 = make_dataset(4, 32, 64, seed=0)
    for a, b in zip(panos + masks, p2 + m2):
        np.testing.assert_array_equal(a, b)


def test_masks_have_holes(small_set):
    _, masks = small_set
    for m in masks:
        assert 0.05 < 1 - m.mean() < 0.999


def test_training_pair_visible_pixels_exact(small_set):
    panos, masks = small_set
    pair = make_training_pair(panos[0], masks[0])
    np.testing.assert_array_equal(pair.input[pair.mask], panos[0][pair.mask])
    assert np.all(pair.input[~pair.mask] == 0)
    assert np.all(pair.mask[pair.raw_mask])


def test_no_local_keeps_more_holes(small_set):
    panos, masks = small_set
    for p, m in zip(panos, masks):
        dense = make_training_pair(p, m, local=True)
        raw = make_training_pair(p, m, local=False)
        np.testing.assert_array_equal(raw.mask, m)
        assert raw.invalid_fraction >= dense.invalid_fraction


def test_densify_fills_pinholes_only():
    m = np.ones((16, 32), bool)
    m[8, 8] = False  # a pinhole surrounded by valid pixels
    m[:, 20:] = False  # a large region
    d = densify(m)
    assert d[8, 8]
    assert not d[:, 24:].any()


def test_irregular_mask_coverage_and_wrap():
    rng = np.random.default_rng(5)
    m = irregular_mask(rng, 64, 128, hole_range=(0.4, 0.4))
    assert 0.35 < 1 - m.mean() < 0.8
    ms = [irregular_mask(np.random.default_rng(s), 32, 64) for s in range(20)]
    # strokes cross the seam in at least one sample
    assert any((~x[:, 0] & ~x[:, -1]).any() for x in ms)


def test_mask_pool_sizes():
    pool = MaskPool(32, 64, n_warp=2, n_irregular=3, seed=0)
    assert len(pool) == 5
    assert pool.sample(np.random.default_rng(0)).shape == (32, 64)


def test_save_load_dataset(tmp_path, small_set):
    panos, masks = small_set
    save_dataset(tmp_path, panos, masks)
    p2, m2 = load_dataset(tmp_path)
    assert len(p2) == 4
    for a, b in zip(masks, m2):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(panos, p2):
        assert np.abs(a - b).max() <= 0.5 / 255 + 1e-6
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        load_dataset(str(tmp_path / "empty"))


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a.w": rng.normal(size=(3, 4)).astype(np.float32), "b": np.zeros(5, np.float32),
              "s": np.float32(rng.normal(size=()))}
    save_checkpoint(str(tmp_path / "m.ckpt"), params, {"face_size": 8, "projection": "cubemap"})
    loaded, cfg = load_checkpoint(str(tmp_path / "m.ckpt"))
    assert cfg == {"face_size": "8", "projection": "cubemap"}
    assert set(loaded) == set(params)
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])


def test_checkpoint_is_little_endian_f32(tmp_path):
    save_checkpoint(str(tmp_path / "m.ckpt"), {"x": np.array([1.0], np.float32)})
    data = (tmp_path / "m.ckpt").read_bytes()
    assert data[:4] == b"PLCK"
    assert data.endswith(np.array([1.0], "<f4").tobytes())


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope" + bytes(20))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(str(bad))
    good = tmp_path / "good.ckpt"
    save_checkpoint(str(good), {"x": np.ones((4, 4), np.float32)})
    data = good.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "trunc.ckpt"))
    (tmp_path / "ver.ckpt").write_bytes(data[:4] + (9).to_bytes(4, "little") + data[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(str(tmp_path / "ver.ckpt"))


def test_config_parsing(tmp_path):
    cfg = parse_config("# header\nsteps = 10  # inline\n\nlr=0.001\n")
    assert cfg == {"steps": "10", "lr": "0.001"}
    with pytest.raises(ValueError, match="line 1"):
        parse_config("novalue\n")
    write_config(str(tmp_path / "c.cfg"), {"a": 1})
    assert read_config(str(tmp_path / "c.cfg")) == {"a": "1"}
