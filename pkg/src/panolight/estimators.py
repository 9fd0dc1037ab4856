"""Estimator-style wrappers around the three pipeline stages.

They follow the scikit-learn conventions (constructor stores
hyper-parameters only, ``get_params`` / ``set_params``, fitted state in
trailing-underscore attributes) without claiming the full ``(X, y)``
contract: the stages consume structured RGB-D views and masks, not feature
matrices.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import psnr
from .global_inpaint import predict as _predict
from .local_inpaint import LocalInpaintConfig, local_inpaint
from .train import LossConfig, TrainConfig, train
from .transformer import ModelConfig, PanoTransformer
from .warp import warp_to_locale
from ._validation import check_equirect


class LocaleWarper(BaseEstimator):
    """Warp a perspective RGB-D view to a panorama centered at a locale."""

    def __init__(self, out_width=512, out_height=256, hole_radius=3, hole_min_valid=2, n_jobs=1):
        self.out_width = out_width
        self.out_height = out_height
        self.hole_radius = hole_radius
        self.hole_min_valid = hole_min_valid
        self.n_jobs = n_jobs

    def fit(self, *args, **kwargs):
        if self.out_width != 2 * self.out_height:
            raise ValueError("out_width must be twice out_height")
        self.fitted_ = True
        return self

    def transform(self, image, depth, K, locale):
        return warp_to_locale(image, depth, K, locale, self.out_width, self.out_height,
                              self.n_jobs, self.hole_radius, self.hole_min_valid)

    def fit_transform(self, image, depth, K, locale):
        return self.fit().transform(image, depth, K, locale)


class LocalInpainter(BaseEstimator):
    """Depth-guided filling of stretch holes in a warp result."""

    def __init__(self, closing_kernel=5, bilateral_radius=4, sigma_spatial=2.0, sigma_range=0.1,
                 t_rel=0.05, stretch_only=True):
        self.closing_kernel = closing_kernel
        self.bilateral_radius = bilateral_radius
        self.sigma_spatial = sigma_spatial
        self.sigma_range = sigma_range
        self.t_rel = t_rel
        self.stretch_only = stretch_only

    def fit(self, *args, **kwargs):
        self.config_ = LocalInpaintConfig(**self.get_params())
        return self

    def transform(self, warp):
        if not hasattr(self, "config_"):
            self.fit()
        return local_inpaint(warp, config=self.config_)


class PanoInpainter(BaseEstimator):
    """Global panorama inpainting with the cubemap transformer."""

    def __init__(self, face_size=32, patch_size=8, embed_dim=128, n_heads=4, n_blocks=4,
                 refine_channels=32, projection="cubemap", steps=2000, batch_size=2, lr=1e-4,
                 gan=True, lambda_adv=0.01, local=True, seed=0):
        self.face_size = face_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.refine_channels = refine_channels
        self.projection = projection
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.gan = gan
        self.lambda_adv = lambda_adv
        self.local = local
        self.seed = seed

    def model_config(self):
        return ModelConfig(self.face_size, self.patch_size, self.embed_dim, self.n_heads,
                           self.n_blocks, self.refine_channels, projection=self.projection)

    def _check(self, panos, masks):
        panos = np.asarray(panos, dtype=np.float32)
        masks = np.asarray(masks, dtype=bool)
        if panos.ndim == 3:
            panos, masks = panos[None], masks[None]
        check_equirect(panos[0])
        if masks.shape != panos.shape[:3]:
            raise ValueError(f"mask shape {masks.shape} does not match panoramas {panos.shape}")
        return panos, masks

    def fit(self, panos, masks, out_dir=None, log=None):
        """Train on complete panoramas and (unpaired) validity masks."""
        panos, masks = self._check(panos, masks)
        res = train(list(panos), list(masks), self.model_config(),
                    LossConfig(lambda_adv=self.lambda_adv, gan_enabled=self.gan),
                    TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                                seed=self.seed, local=self.local),
                    out_dir=out_dir, log=log)
        self.model_ = res.model
        self.history_ = res.history
        return self

    def predict(self, panos, masks):
        """Composited panoramas: observed pixels kept, holes predicted."""
        check_is_fitted(self, "model_")
        single = np.ndim(panos) == 3
        panos, masks = self._check(panos, masks)
        out = _predict(self.model_, panos, masks)
        return out[0] if single else out

    def score(self, panos, masks, targets):
        """Mean PSNR (dB) of the predictions against ``targets``."""
        pred = self.predict(panos, masks)
        targets = np.asarray(targets, dtype=np.float32).reshape(np.shape(pred))
        if pred.ndim == 3:
            return psnr(pred, targets)
        return float(np.mean([psnr(p, t) for p, t in zip(pred, targets)]))

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_.params, self.model_.config.to_dict())

    @classmethod
    def load(cls, path):
        params, cfg = load_checkpoint(path)
        config = ModelConfig.from_dict(cfg)
        est = cls(face_size=config.face_size, patch_size=config.patch_size,
                  embed_dim=config.embed_dim, n_heads=config.n_heads, n_blocks=config.n_blocks,
                  refine_channels=config.refine_channels, projection=config.projection)
        est.model_ = PanoTransformer(config, params)
        return est
