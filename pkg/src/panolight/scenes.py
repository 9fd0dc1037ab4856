"""Procedural box rooms with an analytic ray caster.

These provide the toy training corpus and the exact oracles used by the
warp and local-inpainting tests: every pixel of a perspective render or a
panorama is the closed-form intersection of one ray with the room.
"""
from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, equirect_pixel_dirs, normalize

# wall order: -X, +X, -Y (floor), +Y (ceiling), -Z, +Z
WALL_NAMES = ("left", "right", "floor", "ceiling", "front", "back")


@dataclass
class Light:
    """Axis-aligned emissive rectangle on the ceiling."""

    x: float
    z: float
    half_x: float
    half_z: float
    radiance: tuple = (8.0, 8.0, 8.0)


@dataclass
class Box:
    lo: tuple
    hi: tuple
    color: tuple = (0.6, 0.5, 0.4)


@dataclass
class BoxRoom:
    lo: tuple = (-2.0, -1.4, -3.0)
    hi: tuple = (2.0, 1.6, 2.5)
    wall_colors: tuple = ((0.75, 0.55, 0.45), (0.45, 0.6, 0.75), (0.5, 0.4, 0.3),
                          (0.85, 0.85, 0.8), (0.6, 0.7, 0.55), (0.7, 0.6, 0.7))
    # smooth 3D pattern: rows of (kx, ky, kz, phase, amplitude)
    waves: np.ndarray = field(default_factory=lambda: np.array(
        [[1.3, 0.0, 0.9, 0.3, 0.12], [0.0, 1.7, 1.1, 1.2, 0.10], [0.8, 1.1, 0.0, 2.0, 0.08]]))
    lights: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    uniform_walls: bool = False

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.waves = np.asarray(self.waves, dtype=np.float64)

    @classmethod
    def random(cls, rng, n_lights=None, n_boxes=0):
        lo = -rng.uniform([1.5, 1.2, 2.5], [3.0, 1.6, 4.0])
        hi = rng.uniform([1.5, 1.4, 1.5], [3.0, 1.8, 4.0])
        colors = tuple(tuple(rng.uniform(0.25, 0.85, 3)) for _ in range(6))
        waves = np.column_stack([rng.uniform(-2.0, 2.0, (3, 3)), rng.uniform(0, 2 * np.pi, 3),
                                 rng.uniform(0.04, 0.14, 3)])
        room = cls(tuple(lo), tuple(hi), colors, waves)
        if n_lights is None:
            n_lights = int(rng.integers(1, 3))
        for _ in range(n_lights):
            hx, hz = rng.uniform(0.15, 0.4, 2)
            x = rng.uniform(lo[0] + hx + 0.2, hi[0] - hx - 0.2)
            z = rng.uniform(lo[2] + hz + 0.2, hi[2] - hz - 0.2)
            room.lights.append(Light(x, z, hx, hz, tuple(rng.uniform(4.0, 12.0) * np.ones(3))))
        for _ in range(n_boxes):
            c = rng.uniform(lo + 0.5, hi - 0.5)
            size = rng.uniform(0.2, 0.5, 3)
            room.boxes.append(Box(tuple(c - size), tuple(c + size), tuple(rng.uniform(0.2, 0.8, 3))))
        return room

    def texture(self, p, wall):
        """Albedo-like LDR color of hit points ``p`` on walls ``wall``."""
        k = self.waves
        phase = p @ k[:, :3].T + k[:, 3]
        mod = 1.0 + (np.sin(phase) * k[:, 4]).sum(axis=-1)
        if self.uniform_walls:
            base = np.broadcast_to(np.asarray(self.wall_colors[0]), p.shape)
        else:
            base = np.asarray(self.wall_colors)[wall]
        return np.clip(base * mod[:, None], 0.0, 1.0)

    def raycast(self, origins, dirs):
        """Intersect rays with the room.

        Returns ``(t, points, radiance)``: distance along the (unit) ray,
        hit point, and linear radiance (walls reflect their texture, lights
        emit their radiance).
        """
        o = np.broadcast_to(np.asarray(origins, dtype=np.float64), np.shape(dirs)).reshape(-1, 3)
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        n = d.shape[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = (self.hi - o) / d
            t_lo = (self.lo - o) / d
        t_axis = np.where(d > 0, t_hi, np.where(d < 0, t_lo, np.inf))
        axis = np.argmin(t_axis, axis=1)
        t = t_axis[np.arange(n), axis]
        wall = 2 * axis + (d[np.arange(n), axis] > 0)
        p = o + t[:, None] * d
        rad = self.texture(p, wall)

        for light in self.lights:
            on = ((wall == 3) & (np.abs(p[:, 0] - light.x) <= light.half_x)
                  & (np.abs(p[:, 2] - light.z) <= light.half_z))
            rad[on] = np.asarray(light.radiance)

        for box in self.boxes:
            blo = np.asarray(box.lo)
            bhi = np.asarray(box.hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (blo - o) / d
                t2 = (bhi - o) / d
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (tmax >= tmin) & (tmin > 1e-9) & (tmin < t)
            if np.any(hit):
                t = np.where(hit, tmin, t)
                p = o + t[:, None] * d
                rad[hit] = np.asarray(box.color)
        shape = np.shape(dirs)[:-1]
        return t.reshape(shape), p.reshape(shape + (3,)), rad.reshape(shape + (3,))

    def render_perspective(self, K: Intrinsics):
        """LDR image and z-depth map seen by a camera at the origin."""
        j, i = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
        rays = np.stack([(j - K.cx) / K.fx, -(i - K.cy) / K.fy, -np.ones_like(j)], axis=-1)
        dirs = normalize(rays)
        _, p, rad = self.raycast(np.zeros(3), dirs)
        image = np.clip(rad, 0.0, 1.0).astype(np.float32)
        depth = (-p[..., 2]).astype(np.float32)
        return image, depth

    def render_panorama(self, center, width, height):
        """Equirect ``(ldr, radiance, distance)`` as seen from ``center``."""
        dirs = equirect_pixel_dirs(width, height)
        t, _, rad = self.raycast(np.asarray(center, dtype=np.float64), dirs)
        return (np.clip(rad, 0.0, 1.0).astype(np.float32), rad.astype(np.float32),
                t.astype(np.float32))

    def contains(self, point, margin=0.0):
        point = np.asarray(point)
        return bool(np.all(point > self.lo + margin) and np.all(point < self.hi - margin))
