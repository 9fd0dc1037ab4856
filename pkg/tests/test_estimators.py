import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from panolight.dataset import make_dataset
from panolight.estimators import LocaleWarper, LocalInpainter, PanoInpainter

TINY = dict(face_size=8, patch_size=4, embed_dim=16, n_heads=2, n_blocks=1, refine_channels=4)


def test_params_and_clone():
    est = PanoInpainter(steps=3, **TINY)
    params = est.get_params()
    assert params["steps"] == 3 and params["projection"] == "cubemap"
    other = clone(est).set_params(lr=0.5)
    assert other.lr == 0.5 and est.lr == 1e-4


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        PanoInpainter(**TINY).predict(np.zeros((16, 32, 3)), np.ones((16, 32), bool))


def test_fit_predict_save_load(tmp_path):
    panos, masks = make_dataset(2, 16, 32, seed=0)
    est = PanoInpainter(steps=3, gan=False, **TINY).fit(panos, masks)
    assert len(est.history_) == 3
    out = est.predict(panos[0], masks[0])
    assert out.shape == (16, 32, 3)
    np.testing.assert_array_equal(out[masks[0]], panos[0][masks[0]])
    batch = est.predict(np.stack(panos), np.stack(masks))
    assert batch.shape == (2, 16, 32, 3)
    np.testing.assert_array_equal(batch[0], out)
    assert np.isfinite(est.score(panos, masks, panos))
    est.save(str(tmp_path / "m.ckpt"))
    again = PanoInpainter.load(str(tmp_path / "m.ckpt"))
    np.testing.assert_array_equal(again.predict(panos[0], masks[0]), out)


def test_mask_shape_checked():
    panos, masks = make_dataset(1, 16, 32, seed=0)
    with pytest.raises(ValueError):
        PanoInpainter(**TINY).fit(panos, [m[:, :16] for m in masks])


def test_warper_and_local_inpainter(view):
    image, depth, K = view
    warper = LocaleWarper(out_width=64, out_height=32)
    w = warper.fit_transform(image, depth, K, (0.1, 0.0, 0.0))
    assert w.pano.shape == (32, 64, 3)
    res = LocalInpainter().transform(w)
    assert res.mask.sum() >= w.mask.sum()
    with pytest.raises(ValueError):
        LocaleWarper(out_width=64, out_height=64).fit()
