"""Mappings between pixels, directions, equirect panoramas and cubemaps.

Conventions: right-handed camera space, +Y up, the camera looks along -Z.
Equirect coords ``(u, v)`` live in ``[0, 1) x [0, 1]`` with

    phi   = (u - 0.5) * 2 pi          (longitude, 0 straight ahead)
    theta = (0.5 - v) * pi            (latitude, +pi/2 at the zenith)
    d     = (cos theta sin phi, sin theta, -cos theta cos phi)

Cubemap faces are ordered ``[+X, -X, +Y, -Y, +Z, -Z]``. Each face has a
forward axis ``f``, a right axis ``r`` (in-face ``s`` grows along it) and a
down axis ``b`` (in-face ``t`` grows along it)::

    face  f          r          b
    +X    (+1,0,0)   (0,0,+1)   (0,-1,0)
    -X    (-1,0,0)   (0,0,-1)   (0,-1,0)
    +Y    (0,+1,0)   (+1,0,0)   (0,0,-1)
    -Y    (0,-1,0)   (+1,0,0)   (0,0,+1)
    +Z    (0,0,+1)   (-1,0,0)   (0,-1,0)
    -Z    (0,0,-1)   (+1,0,0)   (0,-1,0)

so that ``d ~ f + (2s - 1) r + (2t - 1) b``. Every face reads upright for a
viewer standing at the center; the camera image lands on the -Z face.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .imageio import bilinear_taps

FACE_NAMES = ("px", "nx", "py", "ny", "pz", "nz")

FACE_FORWARD = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                        dtype=np.float64)
FACE_RIGHT = np.array([[0, 0, 1], [0, 0, -1], [1, 0, 0], [1, 0, 0], [-1, 0, 0], [1, 0, 0]],
                      dtype=np.float64)
FACE_DOWN = np.array([[0, -1, 0], [0, -1, 0], [0, 0, -1], [0, 0, 1], [0, -1, 0], [0, -1, 0]],
                     dtype=np.float64)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels (continuous, pixel-center = i + 0.5)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width, height, fov_deg):
        """Square pixels, centered principal point, horizontal FOV in degrees."""
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(float(f), float(f), width / 2.0, height / 2.0, int(width), int(height))

    @classmethod
    def from_file(cls, path, width, height):
        """Parse ``fx fy cx cy [skew]``; the image size comes from the image."""
        with open(path) as f:
            vals = [float(t) for t in f.read().split()]
        if len(vals) not in (4, 5):
            raise GeometryError(f"{path}: expected 4 or 5 numbers, got {len(vals)}")
        if len(vals) == 5 and vals[4] != 0.0:
            raise GeometryError(f"{path}: nonzero skew is not supported")
        return cls(vals[0], vals[1], vals[2], vals[3], int(width), int(height))

    def to_file(self, path):
        with open(path, "w") as f:
            f.write(f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r} 0\n")


def normalize(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def equirect_to_dir(u, v):
    """Unit direction(s) for normalized equirect coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    phi = (u - 0.5) * 2 * np.pi
    theta = (0.5 - v) * np.pi
    ct = np.cos(theta)
    return np.stack([ct * np.sin(phi), np.sin(theta), -ct * np.cos(phi)], axis=-1)


def dir_to_equirect(d):
    """Inverse of :func:`equirect_to_dir`; ``u = 0.5`` at the poles."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    horiz = np.hypot(x, z)
    theta = np.arctan2(y, horiz)
    phi = np.arctan2(x, -z)
    u = phi / (2 * np.pi) + 0.5
    u = np.where(horiz < 1e-12, 0.5, u)
    u = np.mod(u, 1.0)
    v = 0.5 - theta / np.pi
    return u, v


def equirect_pixel_dirs(width, height):
    """Directions through every pixel center, shape ``(height, width, 3)``."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v)
    return equirect_to_dir(uu, vv)


def dir_to_cubemap(d):
    """Face index and in-face ``(s, t)`` in ``[0, 1]`` for direction(s) ``d``.

    The face is the axis of largest absolute component; exact ties go to
    the earlier face in ``[+X, -X, +Y, -Y, +Z, -Z]``.
    """
    d = np.asarray(d, dtype=np.float64)
    a = np.abs(d)
    axis = np.argmax(a, axis=-1)
    comp = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0]
    face = 2 * axis + (comp < 0)
    fwd = np.einsum("...k,...k->...", d, FACE_FORWARD[face])
    sc = np.einsum("...k,...k->...", d, FACE_RIGHT[face]) / fwd
    tc = np.einsum("...k,...k->...", d, FACE_DOWN[face]) / fwd
    s = np.clip((sc + 1) / 2, 0.0, 1.0)
    t = np.clip((tc + 1) / 2, 0.0, 1.0)
    return face, s, t


def cubemap_to_dir(face, s, t):
    face = np.asarray(face, dtype=np.int64)
    s = np.asarray(s, dtype=np.float64)[..., None]
    t = np.asarray(t, dtype=np.float64)[..., None]
    d = FACE_FORWARD[face] + (2 * s - 1) * FACE_RIGHT[face] + (2 * t - 1) * FACE_DOWN[face]
    return normalize(d)


def cubemap_texel_dirs(face_size):
    """Directions through every texel center, shape ``(6, F, F, 3)``."""
    c = (np.arange(face_size) + 0.5) / face_size
    tt, ss = np.meshgrid(c, c, indexing="ij")
    faces = np.arange(6)[:, None, None] * np.ones((1, face_size, face_size), dtype=np.int64)
    return cubemap_to_dir(faces, np.broadcast_to(ss, faces.shape), np.broadcast_to(tt, faces.shape))


def backproject(px, py, depth, K):
    """Camera-space point(s) for pixel coordinates at z-depth ``depth``."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise GeometryError("backproject requires depth > 0")
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    X = (px - K.cx) / K.fx * depth
    Y = -(py - K.cy) / K.fy * depth
    return np.stack(np.broadcast_arrays(X, Y, -depth), axis=-1)


def project(p, K, check=True):
    """Pixel coordinates and z-depth of camera-space point(s).

    With ``check`` set, any point with ``z >= 0`` raises; otherwise those
    entries come back as NaN.
    """
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    behind = ~(z < 0)
    if check and np.any(behind):
        raise GeometryError("point is behind the camera (z >= 0)")
    depth = np.where(behind, np.nan, -z)
    px = K.cx + K.fx * p[..., 0] / depth
    py = K.cy - K.fy * p[..., 1] / depth
    return px, py, depth


def solid_angle_weights(height):
    """Per-row ``cos(latitude)`` at the pixel centers of an equirect image."""
    v = (np.arange(height) + 0.5) / height
    return np.cos((0.5 - v) * np.pi)


def texel_solid_angles(width, height):
    """Exact solid angle of each equirect texel, shape ``(height, 1)``.

    Rows are latitude bands, so the totals sum to ``4 pi`` exactly (up to
    rounding).
    """
    edges = (0.5 - np.arange(height + 1) / height) * np.pi
    band = np.sin(edges[:-1]) - np.sin(edges[1:])
    return (band * 2 * np.pi / width)[:, None]


# -- resampling operators -------------------------------------------------

@lru_cache(maxsize=32)
def _e2c_operator(width, height, face_size):
    dirs = cubemap_texel_dirs(face_size).reshape(-1, 3)
    u, v = dir_to_equirect(dirs)
    rows, cols, w = bilinear_taps(u * width, v * height, width, height, wrap_u=True)
    n = dirs.shape[0]
    op = sp.csr_matrix((w.ravel(), (np.repeat(np.arange(n), 4), (rows * width + cols).ravel())),
                       shape=(n, width * height))
    near_c = np.minimum(np.floor(u * width).astype(np.int64), width - 1)
    near_r = np.minimum(np.floor(v * height).astype(np.int64), height - 1)
    return op, near_r * width + near_c


@lru_cache(maxsize=32)
def _c2e_operator(face_size, width, height):
    dirs = equirect_pixel_dirs(width, height).reshape(-1, 3)
    face, s, t = dir_to_cubemap(dirs)
    F = face_size
    rows, cols, w = bilinear_taps(s * F, t * F, F, F, wrap_u=False)
    idx = face[:, None] * F * F + rows * F + cols
    n = dirs.shape[0]
    op = sp.csr_matrix((w.ravel(), (np.repeat(np.arange(n), 4), idx.ravel())),
                       shape=(n, 6 * F * F))
    near_c = np.minimum(np.floor(s * F).astype(np.int64), F - 1)
    near_r = np.minimum(np.floor(t * F).astype(np.int64), F - 1)
    return op, face * F * F + near_r * F + near_c


def e2c_operator(width, height, face_size):
    """Sparse bilinear operator mapping a flattened equirect image
    (``H*W`` rows) to flattened cubemap texels (``6*F*F`` rows), plus the
    nearest-neighbor source index of every texel."""
    return _e2c_operator(int(width), int(height), int(face_size))


def c2e_operator(face_size, width, height):
    return _c2e_operator(int(face_size), int(width), int(height))


def _apply(op, img):
    flat = img.reshape(op.shape[1], -1).astype(np.float64)
    return op @ flat


def equirect_to_cubemap(pano, face_size=256, mask=None):
    """Resample an equirect image onto a ``(6, F, F, C)`` cubemap.

    Color is sampled bilinearly. A validity ``mask`` (``(H, W)`` bool) is
    resampled nearest-neighbor, thresholded at 0.5 and appended as the last
    channel, giving the 4-channel RGB+mask layout the transformer consumes.
    """
    pano = np.asarray(pano)
    h, w = pano.shape[:2]
    if w != 2 * h:
        raise GeometryError(f"equirect image must be 2:1, got {w}x{h}")
    op, nearest = e2c_operator(w, h, face_size)
    chans = 1 if pano.ndim == 2 else pano.shape[2]
    out = _apply(op, pano).astype(np.float32).reshape(6, face_size, face_size, chans)
    if pano.ndim == 2:
        out = out[..., 0]
    if mask is not None:
        m = np.asarray(mask, dtype=np.float32).ravel()[nearest] >= 0.5
        m = m.reshape(6, face_size, face_size, 1).astype(np.float32)
        out = np.concatenate([out if out.ndim == 4 else out[..., None], m], axis=-1)
    return out


def cubemap_to_equirect(cube, width, height, mask=None):
    """Resample a ``(6, F, F, C)`` cubemap to a ``(height, width, C)`` panorama.

    Bilinear within each face (clamped at face borders). If ``mask`` (a
    ``(6, F, F)`` array) is given, it is resampled nearest-neighbor and
    returned as a second value.
    """
    cube = np.asarray(cube)
    if cube.shape[0] != 6 or cube.shape[1] != cube.shape[2]:
        raise GeometryError(f"cubemap must be (6, F, F[, C]), got {cube.shape}")
    if width != 2 * height:
        raise GeometryError(f"equirect image must be 2:1, got {width}x{height}")
    F = cube.shape[1]
    op, nearest = c2e_operator(F, width, height)
    chans = 1 if cube.ndim == 3 else cube.shape[3]
    out = _apply(op, cube).astype(np.float32).reshape(height, width, chans)
    if cube.ndim == 3:
        out = out[..., 0]
    if mask is None:
        return out
    m = np.asarray(mask, dtype=np.float32).ravel()[nearest] >= 0.5
    return out, m.reshape(height, width)


# -- cubemap files -----------------------------------------------------------

def cubemap_atlas(cube):
    """3x2 atlas, faces row-major: ``px nx py`` over ``ny pz nz``."""
    cube = np.asarray(cube)
    return np.concatenate([np.concatenate(list(cube[0:3]), axis=1),
                           np.concatenate(list(cube[3:6]), axis=1)], axis=0)


def atlas_to_cubemap(atlas):
    atlas = np.asarray(atlas)
    F = atlas.shape[0] // 2
    if atlas.shape[1] != 3 * F or atlas.shape[0] != 2 * F:
        raise GeometryError(f"atlas must be 3F x 2F, got {atlas.shape[1]}x{atlas.shape[0]}")
    return np.stack([atlas[r * F:(r + 1) * F, c * F:(c + 1) * F]
                     for r in range(2) for c in range(3)])


def save_cubemap(prefix, cube, fmt="png", atlas=True):
    """Write ``{prefix}_px.{fmt}`` ... ``{prefix}_nz.{fmt}`` and optionally ``{prefix}_atlas.{fmt}``."""
    from .imageio import save_pfm, save_png
    writer = {"png": save_png, "pfm": save_pfm}[fmt]
    paths = []
    for name, face in zip(FACE_NAMES, cube):
        paths.append(f"{prefix}_{name}.{fmt}")
        writer(paths[-1], face)
    if atlas:
        paths.append(f"{prefix}_atlas.{fmt}")
        writer(paths[-1], cubemap_atlas(cube))
    return paths


def load_cubemap(prefix, fmt="png"):
    from .imageio import load_pfm, load_png
    reader = {"png": load_png, "pfm": load_pfm}[fmt]
    return np.stack([reader(f"{prefix}_{name}.{fmt}") for name in FACE_NAMES])
