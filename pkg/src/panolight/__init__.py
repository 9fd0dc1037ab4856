"""Locale-aware panorama inpainting for indoor lighting: depth-based warping,
depth-guided local filling, a cubemap transformer for global inpainting and
the evaluation tools around them."""

__version__ = "0.1.0"

from .geometry import Intrinsics, cubemap_to_equirect, equirect_to_cubemap  # noqa: E402
from .warp import WarpResult, classify_holes, warp_to_locale  # noqa: E402
from .local_inpaint import LocalInpaintConfig, local_inpaint  # noqa: E402
from .transformer import ModelConfig, PanoTransformer  # noqa: E402
from .global_inpaint import composite, predict  # noqa: E402
from .losses import reverse_huber  # noqa: E402
from .estimators import LocaleWarper, LocalInpainter, PanoInpainter  # noqa: E402

__all__ = [
    "Intrinsics", "cubemap_to_equirect", "equirect_to_cubemap", "WarpResult", "classify_holes",
    "warp_to_locale", "LocalInpaintConfig", "local_inpaint", "ModelConfig", "PanoTransformer",
    "composite", "predict", "reverse_huber", "LocaleWarper", "LocalInpainter", "PanoInpainter",
]
