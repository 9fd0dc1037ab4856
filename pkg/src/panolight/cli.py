"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``.

Exit codes: 0 success, 1 usage or bad configuration, 2 I/O failure,
3 numeric failure. On failure one JSON line is written to stderr, e.g.
``{"error": "io", "code": 2, "message": "..."}``.
"""
import argparse
import json
import os
import sys

import cv2
import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, read_config
from .dataset import make_dataset, random_view, save_dataset, load_dataset
from .evaluation import MATERIALS, NoLightError, eval_suite, ldr_to_hdr_naive, render_sphere
from .geometry import GeometryError, Intrinsics
from .global_inpaint import composite, model_input, predict
from .imageio import (ImageFormatError, load_mask, load_pfm, load_png, quantize, save_mask, save_pfm,
                      save_png)
from .local_inpaint import LocalInpaintConfig, local_inpaint
from .attention import attention_dump
from .train import LossConfig, TrainConfig, train
from .transformer import ConfigError, ModelConfig, PanoTransformer
from .warp import WarpError, WarpResult, classify_holes, hole_image, warp_to_locale

USAGE, IO, NUMERIC = 1, 2, 3
MODEL_KEYS = ("face_size", "patch_size", "embed_dim", "n_heads", "n_blocks", "refine_channels",
              "mlp_ratio", "projection")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- shared helpers ----------------------------------------------------------

def _locale(text):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"locale must be x,y,z, got {text!r}") from None
    if len(vals) != 3 or not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"locale must be 3 finite numbers, got {text!r}")
    return np.array(vals)


def _settings(args, defaults):
    """Layer: built-in defaults < ``--config`` file < explicit flags."""
    out = dict(defaults)
    if getattr(args, "config", None):
        out.update(read_config(args.config))
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _model_config(settings, no_cubemap=False):
    cfg = {k: settings[k] for k in MODEL_KEYS if k in settings}
    if no_cubemap:
        cfg["projection"] = "equirect"
    try:
        return ModelConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model configuration: {exc}") from exc


def _rgb(path):
    img = load_pfm(path) if path.lower().endswith(".pfm") else load_png(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img[..., :3]


def _depth(path):
    d = load_pfm(path)
    return d[..., 0] if d.ndim == 3 else d


def _view(args):
    image = _rgb(args.image)
    depth = _depth(args.depth)
    K = Intrinsics.from_file(args.intrinsics, image.shape[1], image.shape[0])
    return image, depth, K


def _load_model(args, settings):
    if getattr(args, "checkpoint", None):
        params, cfg = load_checkpoint(args.checkpoint)
        return PanoTransformer(ModelConfig.from_dict(cfg), params)
    print("warning: no --checkpoint given, using an untrained model", file=sys.stderr)
    return PanoTransformer(_model_config(settings, getattr(args, "no_cubemap", False)),
                           seed=args.seed)


def _resize(img, width, height, nearest=False):
    if img.shape[1] == width and img.shape[0] == height:
        return img
    interp = cv2.INTER_NEAREST if nearest else cv2.INTER_AREA if width < img.shape[1] \
        else cv2.INTER_LINEAR
    return cv2.resize(img, (width, height), interpolation=interp)


def _as_saved(img):
    """The values ``img`` has after a round trip through an 8-bit PNG."""
    return (quantize(img).astype(np.float64) / 255).astype(np.float32)


def _infer(model, pano, mask):
    """Run the model at its own resolution and composite at the input resolution."""
    H, W = model.config.pano_size
    small = _resize(pano, W, H)
    small_mask = _resize(mask.astype(np.uint8), W, H, nearest=True).astype(bool)
    pred = predict(model, small, small_mask)
    pred = np.clip(_resize(pred, pano.shape[1], pano.shape[0]), 0.0, 1.0)
    return composite(pano.astype(np.float32), mask, pred.astype(np.float32))


# -- subcommands ----------------------------------------------------------------

def cmd_synth_scene(args):
    rng = np.random.default_rng(args.seed)
    room, K, image, depth, locale = random_view(rng, (args.fov, args.fov), args.size)
    os.makedirs(args.out, exist_ok=True)
    save_png(os.path.join(args.out, "image.png"), image)
    save_pfm(os.path.join(args.out, "depth.pfm"), depth)
    K.to_file(os.path.join(args.out, "intrinsics.txt"))
    with open(os.path.join(args.out, "locale.txt"), "w") as f:
        f.write(",".join(repr(float(v)) for v in locale) + "\n")
    gt, radiance, _ = room.render_panorama(locale, args.pano_width, args.pano_width // 2)
    save_png(os.path.join(args.out, "gt_pano.png"), gt)
    save_pfm(os.path.join(args.out, "gt_radiance.pfm"), radiance)


def _do_warp(image, depth, K, locale, width, threads, out):
    w = warp_to_locale(image, depth, K, locale, width, width // 2, n_jobs=threads)
    os.makedirs(out, exist_ok=True)
    save_png(os.path.join(out, "pano.png"), w.pano)
    save_pfm(os.path.join(out, "pano_depth.pfm"), w.depth)
    save_mask(os.path.join(out, "mask.png"), w.mask)
    save_png(os.path.join(out, "holes.png"), hole_image(w.hole_class))
    return w


def cmd_warp(args):
    image, depth, K = _view(args)
    w = _do_warp(image, depth, K, args.locale, args.width, args.threads, args.out)
    print(f"invalid fraction {w.invalid_fraction:.4f}")


def _local_settings(args):
    d = LocalInpaintConfig()
    s = _settings(args, {"t_rel": d.t_rel, "closing_kernel": d.closing_kernel,
                         "bilateral_radius": d.bilateral_radius,
                         "sigma_spatial": d.sigma_spatial, "sigma_range": d.sigma_range})
    try:
        return LocalInpaintConfig(closing_kernel=int(s["closing_kernel"]),
                                  bilateral_radius=int(s["bilateral_radius"]),
                                  sigma_spatial=float(s["sigma_spatial"]),
                                  sigma_range=float(s["sigma_range"]), t_rel=float(s["t_rel"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _do_local(warp, cfg, out):
    res = local_inpaint(warp, config=cfg)
    save_png(os.path.join(out, "pano_local.png"), res.pano)
    save_mask(os.path.join(out, "mask_local.png"), res.mask)
    return res


def cmd_inpaint_local(args):
    image, depth, K = _view(args)
    pano = _rgb(args.pano)
    mask = load_mask(args.mask)
    pdepth = _depth(args.pano_depth)
    warp = WarpResult(pano, np.where(mask, pdepth, 0).astype(np.float32), mask,
                      classify_holes(mask), np.full(mask.shape, -1), image, depth, K,
                      np.asarray(args.locale))
    os.makedirs(args.out, exist_ok=True)
    res = _do_local(warp, _local_settings(args), args.out)
    print(f"invalid fraction {1 - mask.mean():.4f} -> {1 - res.mask.mean():.4f}")


def cmd_infer(args):
    settings = _settings(args, {})
    model = _load_model(args, settings)
    pano = _rgb(args.pano)
    mask = load_mask(args.mask)
    pg = _infer(model, pano, mask)
    os.makedirs(args.out, exist_ok=True)
    save_png(os.path.join(args.out, "pano_global.png"), pg)


def _train_defaults():
    d = ModelConfig().to_dict()
    t = TrainConfig()
    d.update(steps=t.steps, batch_size=t.batch_size, lr=t.lr, lambda_adv=LossConfig().lambda_adv,
             checkpoint_every=t.checkpoint_every, disc_base=t.disc_base)
    return d


def cmd_train(args):
    s = _settings(args, _train_defaults())
    cfg = _model_config(s, args.no_cubemap)
    gan = args.gan == "on" and not args.no_gan
    panos, masks = load_dataset(args.data)
    H, W = cfg.pano_size
    panos = [_resize(p, W, H) for p in panos]
    masks = [_resize(m.astype(np.uint8), W, H, nearest=True).astype(bool) for m in masks]
    try:
        tc = TrainConfig(steps=int(s["steps"]), batch_size=int(s["batch_size"]), lr=float(s["lr"]),
                         seed=args.seed, local=not args.no_local,
                         checkpoint_every=int(s["checkpoint_every"]), disc_base=int(s["disc_base"]))
        lc = LossConfig(lambda_adv=float(s["lambda_adv"]), gan_enabled=gan)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = train(panos, masks, cfg, lc, tc, out_dir=args.out, log=print)
    if res.history:
        print(f"final recon {res.history[-1][1]:.6f}")


def cmd_eval(args):
    report = eval_suite(args.pred, args.gt, args.out, args.sphere_size, args.threads)
    for name in report.unpaired:
        print(f"unpaired: {name}", file=sys.stderr)
    print(report.table(), end="")


def cmd_render_spheres(args):
    env = load_pfm(args.env) if args.env.lower().endswith(".pfm") else \
        ldr_to_hdr_naive(_rgb(args.env))
    mats = MATERIALS if args.material == "all" else (args.material,)
    root, ext = os.path.splitext(args.out)
    for mat in mats:
        img, _ = render_sphere(env, mat, args.size)
        path = args.out if len(mats) == 1 else f"{root}_{mat}{ext}"
        if path.lower().endswith(".pfm"):
            save_pfm(path, img)
        else:
            save_png(path, img)


def cmd_make_dataset(args):
    H = 2 * args.face_size
    panos, masks = make_dataset(args.n, H, 2 * H, seed=args.seed)
    save_dataset(args.out, panos, masks)
    print(f"wrote {len(panos)} pairs to {args.out}")


def cmd_attention_dump(args):
    settings = _settings(args, {})
    model = _load_model(args, settings)
    H, W = model.config.pano_size
    pano = _resize(_rgb(args.pano), W, H)
    mask = _resize(load_mask(args.mask).astype(np.uint8), W, H, nearest=True).astype(bool)
    x = model_input(pano, mask, model.config)
    try:
        out = attention_dump(model, x, args.block, args.out, args.query)
    except IndexError as exc:
        raise UsageError(str(exc)) from exc
    print(f"block {args.block}: {out['matrix'].shape[0]} tokens, "
          f"self score of token {args.query} = {out['self_score']:.6f}")


def cmd_pipeline(args):
    image, depth, K = _view(args)
    settings = _settings(args, {})
    warp = _do_warp(image, depth, K, args.locale, args.width, args.threads, args.out)
    if args.no_local:
        pano, mask = warp.pano, warp.mask
    else:
        res = _do_local(warp, _local_settings(args), args.out)
        pano, mask = res.pano, res.mask
    # continue from what was written, so the chained subcommands give the same result
    pano = _as_saved(pano)
    model = _load_model(args, settings)
    pg = _infer(model, pano, mask)
    save_png(os.path.join(args.out, "pano_global.png"), pg)
    save_pfm(os.path.join(args.out, "pano_hdr.pfm"), ldr_to_hdr_naive(pg).astype(np.float32))
    print(f"invalid fraction: warp {warp.invalid_fraction:.4f}, model input {1 - mask.mean():.4f}")


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="panolight", description="Locale-aware panorama inpainting toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        sp.add_argument("--config", help="key = value settings file; flags override it")
        return sp

    def view_args(sp):
        sp.add_argument("--image", required=True, help="perspective RGB image (PNG)")
        sp.add_argument("--depth", required=True, help="z-depth map (PFM, meters)")
        sp.add_argument("--intrinsics", required=True, help="text file: fx fy cx cy [skew]")
        sp.add_argument("--locale", required=True, type=_locale, help="x,y,z in camera space")

    def local_args(sp):
        sp.add_argument("--t-rel", dest="t_rel", type=float, help="relative depth tolerance")

    def model_args(sp):
        sp.add_argument("--checkpoint", help="trained model (.ckpt)")
        sp.add_argument("--no-cubemap", action="store_true",
                        help="equirect ablation when no checkpoint is given")

    sp = add("synth-scene", cmd_synth_scene, "Render a random box-room view with exact depth.")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=64, help="image width and height")
    sp.add_argument("--fov", type=float, default=60.0, help="horizontal FOV in degrees")
    sp.add_argument("--pano-width", type=int, default=512)

    sp = add("warp", cmd_warp, "Warp an RGB-D view to a locale-centered panorama.")
    view_args(sp)
    sp.add_argument("--width", type=int, default=512, help="panorama width (height = width / 2)")
    sp.add_argument("--out", required=True)

    sp = add("inpaint-local", cmd_inpaint_local, "Depth-guided filling of stretch holes.")
    view_args(sp)
    local_args(sp)
    sp.add_argument("--pano", required=True)
    sp.add_argument("--pano-depth", dest="pano_depth", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True)

    sp = add("infer", cmd_infer, "Global inpainting of a masked panorama.")
    model_args(sp)
    sp.add_argument("--pano", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "Train the panorama transformer.")
    sp.add_argument("--data", required=True, help="directory from make-dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--gan", choices=("on", "off"), default="on")
    sp.add_argument("--no-gan", action="store_true", help="same as --gan off")
    sp.add_argument("--no-cubemap", action="store_true", help="equirect ablation")
    sp.add_argument("--no-local", action="store_true", help="skip mask densification")

    sp = add("eval", cmd_eval, "Metrics and sphere renders over paired directories.")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", help="CSV report path")
    sp.add_argument("--sphere-size", dest="sphere_size", type=int, default=32)

    sp = add("render-spheres", cmd_render_spheres, "Render a sphere lit by an environment map.")
    sp.add_argument("--env", required=True, help="PFM (linear) or PNG (naive inverse gamma)")
    sp.add_argument("--material", choices=MATERIALS + ("all",), default="all")
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--out", required=True)

    sp = add("make-dataset", cmd_make_dataset, "Write synthetic panoramas and masks.")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--face-size", dest="face_size", type=int, default=32)

    sp = add("attention-dump", cmd_attention_dump, "Dump attention maps of one block.")
    model_args(sp)
    sp.add_argument("--pano", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--block", type=int, required=True, help="block number, from 1")
    sp.add_argument("--query", type=int, default=0, help="query token index")
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "warp -> local -> global -> naive HDR, all intermediates.")
    view_args(sp)
    local_args(sp)
    model_args(sp)
    sp.add_argument("--width", type=int, default=512)
    sp.add_argument("--no-local", action="store_true")
    sp.add_argument("--out", required=True)
    return p


def _fail(kind, code, message):
    print(json.dumps({"error": kind, "code": code, "message": message}), file=sys.stderr)
    return code


def _join_locale(argv):
    # argparse takes "-0.5,0,1" for an option; glue it onto --locale instead
    out = []
    it = iter(argv)
    for a in it:
        if a == "--locale":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--locale={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_join_locale(argv))
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.fn(args)
    except UsageError as exc:
        return _fail("usage", USAGE, str(exc))
    except (OSError, ImageFormatError, CheckpointError) as exc:
        return _fail("io", IO, str(exc))
    except (FloatingPointError, WarpError, GeometryError, NoLightError) as exc:
        return _fail("numeric", NUMERIC, str(exc))
    except (ConfigError, ValueError) as exc:
        return _fail("usage", USAGE, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
