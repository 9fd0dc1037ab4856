"""Training loop: berHu reconstruction on the composited panorama, optional
PatchGAN adversarial term, Adam, loss CSV and checkpoints."""
import os
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from . import discriminator as disc
from .checkpoint import save_checkpoint, write_config
from .dataset import make_training_pair
from .global_inpaint import model_input, output_to_pano, pano_grad_to_output, composite
from .losses import gan_losses, gan_losses_grad, reverse_huber, reverse_huber_grad
from .optim import AdamState, NonFiniteGradientError, adam_step
from .transformer import ModelConfig, PanoTransformer


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, reason, checkpoint=None):
        msg = f"training diverged at step {step}: {reason}"
        if checkpoint:
            msg += f" (last good parameters in {checkpoint})"
        super().__init__(msg)
        self.step = step
        self.checkpoint = checkpoint


@dataclass
class LossConfig:
    T: float = 0.2
    lambda_adv: float = 0.01
    gan_enabled: bool = True

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be non-negative")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 2
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    local: bool = True  # densify masks (stand-in for local inpainting)
    checkpoint_every: int = 500
    disc_base: int = 64
    queue_size: int = 2


@dataclass
class TrainResult:
    model: PanoTransformer
    history: list = field(default_factory=list)  # (step, recon, adv_g, adv_d)
    disc_params: dict = None

    @property
    def recon(self):
        return np.array([h[1] for h in self.history])


def build_pairs(panos, masks, local=True):
    return [make_training_pair(p, m, local) for p, m in zip(panos, masks)]


def _batch_order(n, steps, batch_size, seed):
    """Indices for every step: a fresh permutation per pass over the data."""
    rng = np.random.default_rng(seed)
    flat = []
    while len(flat) < steps * batch_size:
        flat.extend(rng.permutation(n).tolist())
    return np.array(flat[:steps * batch_size]).reshape(steps, batch_size)


def _producer(order, X, P, M, T, q, stop):
    for idx in order:
        item = (X[idx], P[idx], M[idx], T[idx])
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                break
            except queue.Full:
                continue
        if stop.is_set():
            return


def train(panos, masks, model_cfg=None, loss_cfg=None, train_cfg=None, out_dir=None,
          model=None, log=None):
    """Fit a PanoTransformer to ``(panorama, mask)`` pairs.

    Minibatches are assembled by a background thread into a bounded queue in
    a fixed order, so results do not depend on timing. With ``out_dir`` the
    loss curve goes to ``loss.csv`` and checkpoints to ``step_XXXXXX.ckpt``
    and ``model.ckpt``. A non-finite loss or gradient raises
    :class:`TrainingDiverged` after saving the last good parameters.
    """
    model_cfg = model_cfg or ModelConfig()
    loss_cfg = loss_cfg or LossConfig()
    tc = train_cfg or TrainConfig()
    if not len(panos):
        raise ValueError("need at least one training pair")
    if tc.steps < 0 or tc.batch_size < 1:
        raise ValueError("steps must be >= 0 and batch_size >= 1")

    pairs = build_pairs(panos, masks, tc.local)
    P = np.stack([p.input for p in pairs])
    M = np.stack([p.mask for p in pairs])
    T = np.stack([p.target for p in pairs])
    X = model_input(P, M, model_cfg)
    order = _batch_order(len(pairs), tc.steps, tc.batch_size, tc.seed)

    model = model or PanoTransformer(model_cfg, seed=tc.seed)
    params = model.params
    state = AdamState(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2)
    use_gan = loss_cfg.gan_enabled
    dparams = dstate = None
    if use_gan:
        dparams = disc.init_disc_params(tc.disc_base, 3, tc.seed + 1)
        dstate = AdamState(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2)

    csv = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_config(os.path.join(out_dir, "model.cfg"), model_cfg.to_dict())
        csv = open(os.path.join(out_dir, "loss.csv"), "w", encoding="utf-8")
        csv.write("step,recon,adv_g,adv_d\n")

    result = TrainResult(model, [], dparams)
    q = queue.Queue(maxsize=max(1, tc.queue_size))
    stop = threading.Event()
    worker = threading.Thread(target=_producer, args=(order, X, P, M, T, q, stop), daemon=True)
    worker.start()
    last_good = {k: v.copy() for k, v in params.items()}
    try:
        for step in range(1, tc.steps + 1):
            xb, pb, mb, tb = q.get()
            y, cache = model.forward(xb, keep_cache=True)
            pred = output_to_pano(y, model_cfg)
            pg = composite(pb, mb, pred)
            recon = reverse_huber(pg, tb, loss_cfg.T)
            dpg = reverse_huber_grad(pg, tb, loss_cfg.T)
            adv_g = adv_d = 0.0
            if use_gan:
                fake, fcache = disc.discriminator_forward(pg, dparams, keep_cache=True)
                real, rcache = disc.discriminator_forward(tb, dparams, keep_cache=True)
                adv_d, adv_g = gan_losses(real, fake)
                d_real, d_fake, g_fake = gan_losses_grad(real, fake)
                if loss_cfg.lambda_adv > 0:
                    dx_adv, _ = disc.discriminator_backward(fcache, g_fake, dparams)
                    dpg = dpg + loss_cfg.lambda_adv * dx_adv
            if not np.isfinite(recon + adv_g + adv_d):
                raise TrainingDiverged(step, "non-finite loss",
                                       _save_last_good(out_dir, last_good, model_cfg))
            dpred = np.where(mb[..., None], 0, dpg).astype(y.dtype)
            try:
                grads = model.backward(cache, pano_grad_to_output(dpred, model_cfg))
                adam_step(params, grads, state)
                if use_gan:
                    _, g_r = disc.discriminator_backward(rcache, d_real, dparams)
                    _, g_f = disc.discriminator_backward(fcache, d_fake, dparams)
                    adam_step(dparams, {k: g_r[k] + g_f[k] for k in g_r}, dstate)
            except FloatingPointError as exc:
                # the generator may already be updated; roll back before saving
                for k in params:
                    params[k][...] = last_good[k]
                raise TrainingDiverged(step, str(exc),
                                       _save_last_good(out_dir, last_good, model_cfg)) from exc
            for k in params:
                last_good[k][...] = params[k]

            result.history.append((step, recon, adv_g, adv_d))
            if csv:
                csv.write(f"{step},{recon!r},{adv_g!r},{adv_d!r}\n")
            if log and (step == 1 or step % 100 == 0 or step == tc.steps):
                log(f"step {step} recon {recon:.5f} adv_g {adv_g:.4f} adv_d {adv_d:.4f}")
            if out_dir and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                save_checkpoint(os.path.join(out_dir, f"step_{step:06d}.ckpt"), params,
                                model_cfg.to_dict())
    finally:
        stop.set()
        worker.join()
        if csv:
            csv.close()
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "model.ckpt"), params, model_cfg.to_dict())
    return result


def _save_last_good(out_dir, params, model_cfg):
    if not out_dir:
        return None
    path = os.path.join(out_dir, "last_good.ckpt")
    save_checkpoint(path, params, model_cfg.to_dict())
    return path


def evaluate_loss(model, panos, masks, T=0.2, local=True):
    """Mean berHu loss of the composited prediction over all pairs."""
    pairs = build_pairs(panos, masks, local)
    P = np.stack([p.input for p in pairs])
    M = np.stack([p.mask for p in pairs])
    tgt = np.stack([p.target for p in pairs])
    pred = output_to_pano(model.forward(model_input(P, M, model.config)), model.config)
    return reverse_huber(composite(P, M, pred), tgt, T)
