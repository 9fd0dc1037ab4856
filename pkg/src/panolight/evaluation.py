"""Image metrics, light-direction error and rendered-sphere evaluation.

Sphere shading is a deterministic sum over every environment texel rather
than Monte Carlo. Each lobe is normalized by its own discrete weight sum, so
a constant environment shades to exactly ``albedo * c`` at any resolution.
"""
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import dir_to_equirect, equirect_pixel_dirs, texel_solid_angles
from .imageio import bilinear_sample, load_pfm, load_png

LUMA_601 = np.array([0.299, 0.587, 0.114])
LUMA_709 = np.array([0.2126, 0.7152, 0.0722])
MATERIALS = ("diffuse", "matte", "mirror")
DIFFUSE_ALBEDO = 0.5
MATTE_ALBEDO = 0.8
MATTE_EXPONENT = 50


class NoLightError(ValueError):
    """The environment map has no pixel above the light threshold."""


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def rmse(a, b):
    return float(np.sqrt(mse(a, b)))


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b, max_val=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    m = mse(a, b)
    if m == 0:
        return float("inf")
    return float(10.0 * np.log10(max_val ** 2 / m))


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] == 1:
            return img[..., 0]
        return img[..., :3] @ LUMA_601
    return img


def _gaussian_valid(img, g):
    # separable filtering, keeping only windows that fit inside the image
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over valid Gaussian windows of the Rec.601 luma."""
    a, b = _pair(a, b)
    a, b = to_gray(a), to_gray(b)
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} smaller than the {win}x{win} window")
    x = np.arange(win) - win // 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    g /= g.sum()
    mu_a, mu_b = _gaussian_valid(a, g), _gaussian_valid(b, g)
    s_aa = _gaussian_valid(a * a, g) - mu_a * mu_a
    s_bb = _gaussian_valid(b * b, g) - mu_b * mu_b
    s_ab = _gaussian_valid(a * b, g) - mu_a * mu_b
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


# -- light extraction and angular error -------------------------------------

def _label_wrapped(mask):
    """8-connected components, joining components across the u = 0 / 1 seam."""
    lab, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    parent = np.arange(n + 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    h = mask.shape[0]
    for y in range(h):
        for dy in (-1, 0, 1):
            yy = y + dy
            if 0 <= yy < h:
                a, b = lab[y, -1], lab[yy, 0]
                if a and b:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n + 1)])
    _, compact = np.unique(roots, return_inverse=True)
    return compact[lab], int(compact.max())


def extract_lights(env, percentile=95.0):
    """Unit directions of the bright connected regions of an equirect map.

    Pixels whose luminance exceeds the given percentile are grouped into
    connected components (wrapping in u); each yields the solid-angle
    weighted mean of its pixel directions.
    """
    env = np.asarray(env, dtype=np.float64)
    lum = env[..., :3] @ LUMA_709 if env.ndim == 3 else env
    thr = np.percentile(lum, percentile)
    bright = lum > thr
    if not bright.any():
        if lum.max() == lum.min():
            raise NoLightError("environment map is constant")
        bright = lum >= thr
    h, w = lum.shape
    labels, n = _label_wrapped(bright)
    dirs = equirect_pixel_dirs(w, h)
    weight = np.broadcast_to(texel_solid_angles(w, h), (h, w))
    out = []
    for k in range(1, n + 1):
        sel = labels == k
        v = (dirs[sel] * weight[sel][:, None]).sum(axis=0)
        out.append(v / np.linalg.norm(v))
    return np.array(out)


def _angles(a, b):
    # atan2 form stays accurate for nearly parallel vectors, unlike arccos
    cross = np.linalg.norm(np.cross(a[:, None, :], b[None, :, :]), axis=-1)
    return np.degrees(np.arctan2(cross, a @ b.T))


def _directed_mean(src, dst):
    return float(_angles(src, dst).min(axis=1).mean())


def angular_error(pred, gt, percentile=95.0):
    """Symmetrized mean angle (degrees) between extracted light directions."""
    pl = extract_lights(pred, percentile)
    gl = extract_lights(gt, percentile)
    return 0.5 * (_directed_mean(gl, pl) + _directed_mean(pl, gl))


# -- sphere rendering ---------------------------------------------------------

def ldr_to_hdr_naive(ldr, gamma=2.2, scale=1.0):
    """Placeholder HDR expansion: ``scale * ldr ** gamma``."""
    ldr = np.clip(np.asarray(ldr, dtype=np.float64), 0.0, 1.0)
    return scale * ldr ** gamma


def sphere_normals(size):
    """Normals of a unit sphere seen by an orthographic camera looking down -Z."""
    c = (np.arange(size) + 0.5) / size * 2 - 1
    x, y = np.meshgrid(c, -c)
    r2 = x * x + y * y
    inside = r2 < 1.0
    z = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    return np.stack([x, y, z], axis=-1), inside


def render_sphere(env, material="diffuse", size=64, albedo=None, chunk=512):
    """Shade a sphere with the equirect environment ``env`` (linear radiance).

    Returns ``(image, inside)``; pixels outside the disk are zero.
    """
    if material not in MATERIALS:
        raise ValueError(f"material must be one of {MATERIALS}, got {material!r}")
    env = np.asarray(env, dtype=np.float64)
    if env.ndim == 2:
        env = env[..., None]
    h, w = env.shape[:2]
    if w != 2 * h:
        raise ValueError(f"environment map must be 2:1, got {w}x{h}")
    n, inside = sphere_normals(size)
    nrm = n[inside]
    view = np.array([0.0, 0.0, -1.0])
    refl = view - 2 * (nrm @ view)[:, None] * nrm
    out = np.zeros((size, size, env.shape[2]))

    if material == "mirror":
        u, v = dir_to_equirect(refl)
        out[inside] = bilinear_sample(env, u * w, v * h, wrap_u=True)
        return out, inside

    dirs = equirect_pixel_dirs(w, h).reshape(-1, 3)
    domega = np.broadcast_to(texel_solid_angles(w, h), (h, w)).reshape(-1)
    flat = env.reshape(-1, env.shape[2])
    axis = nrm if material == "diffuse" else refl
    alb = albedo if albedo is not None else (DIFFUSE_ALBEDO if material == "diffuse" else MATTE_ALBEDO)
    vals = np.empty((len(axis), env.shape[2]))
    for s in range(0, len(axis), chunk):
        c = np.clip(axis[s:s + chunk] @ dirs.T, 0.0, None)
        if material == "matte":
            c = c ** MATTE_EXPONENT
        wt = c * domega
        vals[s:s + chunk] = (wt @ flat) / wt.sum(axis=1, keepdims=True)
    out[inside] = alb * vals
    return out, inside


# -- dataset-level evaluation --------------------------------------------------

@dataclass
class SampleMetrics:
    name: str
    psnr: float
    ssim: float
    angular: float  # nan when no light could be extracted
    sphere: dict  # material -> (mse, rmse, mae)


def _load_any(path):
    if path.lower().endswith(".pfm"):
        hdr = load_pfm(path)
        ldr = np.clip(hdr, 0.0, 1.0) ** (1 / 2.2)
        return ldr, hdr
    ldr = load_png(path)
    if ldr.ndim == 2:
        ldr = np.repeat(ldr[..., None], 3, axis=2)
    return ldr[..., :3], ldr_to_hdr_naive(ldr[..., :3])


def evaluate_pair(name, pred_path, gt_path, sphere_size=32):
    p_ldr, p_hdr = _load_any(pred_path)
    g_ldr, g_hdr = _load_any(gt_path)
    spheres = {}
    for mat in MATERIALS:
        a, inside = render_sphere(p_hdr, mat, sphere_size)
        b, _ = render_sphere(g_hdr, mat, sphere_size)
        spheres[mat] = (mse(a[inside], b[inside]), rmse(a[inside], b[inside]),
                        mae(a[inside], b[inside]))
    try:
        ang = angular_error(p_hdr, g_hdr)
    except NoLightError:
        ang = float("nan")
    return SampleMetrics(name, psnr(p_ldr, g_ldr), ssim(p_ldr, g_ldr), ang, spheres)


def pair_files(pred_dir, gt_dir, exts=(".png", ".pfm")):
    """Match files by name; returns ``(pairs, unpaired)``."""
    def listing(d):
        return {f: os.path.join(d, f) for f in os.listdir(d) if f.lower().endswith(exts)}
    p, g = listing(pred_dir), listing(gt_dir)
    pairs = [(n, p[n], g[n]) for n in sorted(set(p) & set(g))]
    unpaired = sorted(set(p) ^ set(g))
    return pairs, unpaired


@dataclass
class EvalReport:
    samples: list
    unpaired: list

    def aggregate(self):
        agg = {}
        if not self.samples:
            return agg
        for mat in MATERIALS:
            for j, key in enumerate(("mse", "rmse", "mae")):
                agg[f"{mat}_{key}"] = float(np.mean([s.sphere[mat][j] for s in self.samples]))
        finite_psnr = [s.psnr for s in self.samples]
        agg["psnr"] = float(np.mean(finite_psnr))
        agg["ssim"] = float(np.mean([s.ssim for s in self.samples]))
        ang = np.array([s.angular for s in self.samples])
        ok = np.isfinite(ang)
        agg["angular_mean"] = float(ang[ok].mean()) if ok.any() else float("nan")
        agg["angular_std"] = float(ang[ok].std()) if ok.any() else float("nan")
        agg["angular_excluded"] = int((~ok).sum())
        return agg

    def rows(self):
        out = []
        for s in self.samples:
            row = {"name": s.name, "psnr": s.psnr, "ssim": s.ssim, "angular": s.angular}
            for mat in MATERIALS:
                row.update(zip((f"{mat}_mse", f"{mat}_rmse", f"{mat}_mae"), s.sphere[mat]))
            out.append(row)
        return out

    def write_csv(self, path):
        rows = self.rows()
        keys = ["name", "psnr", "ssim", "fid", "angular"] + [
            f"{m}_{k}" for m in MATERIALS for k in ("mse", "rmse", "mae")]
        with open(path, "w", newline="", encoding="utf-8") as f:
            wr = csv.DictWriter(f, fieldnames=keys)
            wr.writeheader()
            for r in rows:
                wr.writerow({**r, "fid": "n/a"})
            agg = self.aggregate()
            if agg:
                mean_row = {k: agg.get(k, "") for k in keys}
                mean_row.update(name="mean", fid="n/a", angular=agg["angular_mean"])
                wr.writerow(mean_row)

    def table(self):
        """Human-readable summary laid out like the usual lighting / inpainting tables."""
        agg = self.aggregate()
        if not agg:
            return "no paired samples\n"
        lines = [f"{len(self.samples)} pairs, {len(self.unpaired)} unpaired skipped", "",
                 f"{'':10s}{'diffuse':>12s}{'matte':>12s}{'mirror':>12s}"]
        for key in ("mse", "rmse", "mae"):
            lines.append(f"{key.upper():10s}" + "".join(
                f"{agg[f'{m}_{key}']:12.5f}" for m in MATERIALS))
        lines.append(f"{'A (deg)':10s}{agg['angular_mean']:12.3f} +- {agg['angular_std']:.3f}"
                     f" ({agg['angular_excluded']} excluded)")
        lines += ["", f"{'PSNR':>10s}{'SSIM':>10s}{'FID':>10s}",
                  f"{agg['psnr']:10.3f}{agg['ssim']:10.4f}{'n/a':>10s}"]
        return "\n".join(lines) + "\n"


def eval_suite(pred_dir, gt_dir, out_csv=None, sphere_size=32, n_jobs=1):
    """Evaluate every name-matched prediction / ground-truth pair."""
    pairs, unpaired = pair_files(pred_dir, gt_dir)
    job = lambda t: evaluate_pair(t[0], t[1], t[2], sphere_size)  # noqa: E731
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            samples = list(ex.map(job, pairs))
    else:
        samples = [job(t) for t in pairs]
    report = EvalReport(samples, unpaired)
    if out_csv:
        report.write_csv(out_csv)
    return report
