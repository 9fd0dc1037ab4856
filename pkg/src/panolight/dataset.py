"""Training pairs: complete panoramas, a mask pool and mask-aware densification.

Panoramas and masks are unpaired. The pool mixes masks produced by actually
warping random views of random rooms to random locales with procedural
irregular brush-stroke masks. Densification stands in for local inpainting
on the ground truth: holes that :func:`classify_holes` labels as stretch are
refilled from the panorama, out-of-view holes stay empty.
"""
import os
from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import Intrinsics
from .imageio import load_mask, load_png, save_mask, save_png
from .scenes import BoxRoom
from .warp import STRETCH, classify_holes, warp_to_locale
from ._validation import check_image, check_mask


@dataclass
class TrainingPair:
    target: np.ndarray  # (H, W, 3) complete panorama
    input: np.ndarray  # target with invalid pixels zeroed
    mask: np.ndarray  # validity after densification
    raw_mask: np.ndarray  # validity before densification

    @property
    def invalid_fraction(self):
        return float(1.0 - self.mask.mean())


def densify(mask, radius=3, min_valid=2):
    """Mask after filling stretch-class holes."""
    mask = np.asarray(mask, dtype=bool)
    return mask | (classify_holes(mask, radius, min_valid) == STRETCH)


def make_training_pair(pano, mask, local=True):
    """Mask ``pano`` and (unless ``local`` is false) densify the mask.

    Visible pixels of the input equal the target exactly.
    """
    pano = check_image(pano, "panorama")
    mask = check_mask(mask, pano.shape[:2])
    dense = densify(mask) if local else mask.copy()
    inp = np.where(dense[..., None], pano, np.float32(0))
    return TrainingPair(pano, inp, dense, mask)


def irregular_mask(rng, height, width, hole_range=(0.3, 0.7), max_strokes=40):
    """Random thick brush strokes; returns a validity mask (True = kept).

    Strokes are drawn on a canvas three panoramas wide and folded back so
    they wrap across the longitude seam.
    """
    target = rng.uniform(*hole_range)
    canvas = np.zeros((height, 3 * width), dtype=np.uint8)
    hole = np.zeros((height, width), dtype=bool)
    for _ in range(max_strokes):
        x, y = rng.uniform(width, 2 * width), rng.uniform(0, height)
        thick = int(rng.integers(max(2, height // 16), max(3, height // 5)))
        for _ in range(int(rng.integers(2, 6))):
            ang = rng.uniform(0, 2 * np.pi)
            length = rng.uniform(0.1, 0.35) * width
            nx = float(np.clip(x + length * np.cos(ang), 0, 3 * width - 1))
            ny = float(np.clip(y + length * np.sin(ang), 0, height - 1))
            cv2.line(canvas, (int(x), int(y)), (int(nx), int(ny)), 1, thick)
            x, y = nx, ny
        hole = (canvas[:, :width] | canvas[:, width:2 * width] | canvas[:, 2 * width:]) > 0
        if hole.mean() >= target:
            break
    return ~hole


def random_view(rng, fov_range=(60.0, 90.0), size=64, locale_radius=0.5, n_boxes=1):
    """A random room, a camera at its origin looking down -Z and a locale."""
    room = BoxRoom.random(rng, n_boxes=n_boxes)
    K = Intrinsics.from_fov(size, size, rng.uniform(*fov_range))
    image, depth = room.render_perspective(K)
    locale = rng.uniform(-locale_radius, locale_radius, 3)
    return room, K, image, depth, locale


def warp_mask(rng, height, width, **kwargs):
    """Validity mask of the warp of a random view to a random locale."""
    _, K, image, depth, locale = random_view(rng, **kwargs)
    return warp_to_locale(image, depth, K, locale, width, height).mask


class MaskPool:
    """Fixed pool of ``n_warp`` warp-derived and ``n_irregular`` procedural masks."""

    def __init__(self, height, width, n_warp=8, n_irregular=8, seed=0):
        rng = np.random.default_rng(seed)
        self.masks = [warp_mask(rng, height, width) for _ in range(n_warp)]
        self.masks += [irregular_mask(rng, height, width) for _ in range(n_irregular)]
        self.n_warp = n_warp

    def __len__(self):
        return len(self.masks)

    def sample(self, rng):
        return self.masks[int(rng.integers(len(self.masks)))]


def synthetic_panoramas(n, height, width, seed=0):
    """Ground-truth LDR panoramas of random rooms seen from random locales."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        room = BoxRoom.random(rng, n_boxes=int(rng.integers(0, 3)))
        locale = rng.uniform(-0.5, 0.5, 3)
        out.append(room.render_panorama(locale, width, height)[0])
    return out


def make_dataset(n, height, width, seed=0, n_warp=None, n_irregular=None):
    """``n`` panoramas with one mask each, alternating warp and irregular masks.

    Returns ``(panoramas, masks)``; pairs are built from them at load time so
    the densification choice stays a training option.
    """
    n_warp = (n + 1) // 2 if n_warp is None else n_warp
    n_irregular = n - n_warp if n_irregular is None else n_irregular
    panos = synthetic_panoramas(n, height, width, seed)
    pool = MaskPool(height, width, n_warp, n_irregular, seed + 1)
    warp_masks, irr_masks = pool.masks[:n_warp], pool.masks[n_warp:]
    masks = []
    for i in range(n):
        # alternate the two families while both last
        use_warp = (i % 2 == 0 and warp_masks) or not irr_masks
        masks.append((warp_masks if use_warp else irr_masks).pop(0))
    return panos, masks


def save_dataset(root, panos, masks):
    os.makedirs(root, exist_ok=True)
    for i, (p, m) in enumerate(zip(panos, masks)):
        save_png(os.path.join(root, f"{i:04d}_pano.png"), p)
        save_mask(os.path.join(root, f"{i:04d}_mask.png"), m)


def load_dataset(root):
    """Read ``NNNN_pano.png`` / ``NNNN_mask.png`` pairs in index order."""
    names = sorted(f for f in os.listdir(root) if f.endswith("_pano.png"))
    if not names:
        raise FileNotFoundError(f"no *_pano.png files in {root}")
    panos, masks = [], []
    for name in names:
        stem = name[: -len("_pano.png")]
        pano = load_png(os.path.join(root, name))
        if pano.ndim == 2:
            pano = np.repeat(pano[..., None], 3, axis=2)
        panos.append(pano[..., :3])
        masks.append(load_mask(os.path.join(root, stem + "_mask.png")))
    return panos, masks
