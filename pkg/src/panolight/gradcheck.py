"""Central finite-difference checks of the analytic gradients."""
import numpy as np

from .global_inpaint import composite, model_input, output_to_pano, reconstruction_step
from .losses import reverse_huber
from .transformer import PanoTransformer, param_group


def numerical_grad(f, x, indices, eps=1e-4):
    """Central differences of scalar ``f()`` w.r.t. ``x.flat[indices]`` (x modified in place)."""
    flat = x.reshape(-1)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2 * eps)
    return out


def relative_error(analytic, numeric):
    """``max|a - n| / max(max|a|, max|n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def _loss_and_pattern(model, x, panos, masks, targets, T):
    """Loss plus the on/off pattern of every kink it passes through.

    The pattern covers the residual-block ReLUs and both berHu branches
    (sign of the residual and which side of the knee it sits on).
    """
    y, cache = model.forward(x, keep_cache=True)
    pg = composite(panos, masks, output_to_pano(y, model.config))
    d = pg - targets
    relus = [c[1].ravel() for c in cache[4][0]]
    pattern = np.concatenate(relus + [(np.abs(d) <= T).ravel(), (d > 0).ravel()])
    return reverse_huber(pg, targets, T), pattern


def gradcheck_model(model, panos, masks, targets, eps=1e-4, samples=12, seed=0, T=0.2):
    """Compare backprop against finite differences for every parameter tensor.

    Up to ``samples`` entries per tensor are probed. A probe whose +-eps
    evaluations flip any kink (ReLU or berHu branch) is discarded and another
    entry drawn, since the difference quotient is meaningless across a kink.
    Returns ``({group: max relative error}, {tensor: error}, n_discarded)``.
    """
    if model.params["embed.w"].dtype != np.float64:
        raise TypeError("gradient checks need a float64 model")
    rng = np.random.default_rng(seed)
    panos = np.asarray(panos, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    x = model_input(panos, masks, model.config, np.float64)
    _, grads, _ = reconstruction_step(model, x, panos, masks, targets, T)
    _, base = _loss_and_pattern(model, x, panos, masks, targets, T)

    per_tensor = {}
    discarded = 0
    for name in sorted(model.params):
        p = model.params[name]
        flat = p.reshape(-1)
        ana, num = [], []
        for i in rng.permutation(p.size):
            if len(num) == samples:
                break
            old = flat[i]
            flat[i] = old + eps
            fp, pat_p = _loss_and_pattern(model, x, panos, masks, targets, T)
            flat[i] = old - eps
            fm, pat_m = _loss_and_pattern(model, x, panos, masks, targets, T)
            flat[i] = old
            if not (np.array_equal(pat_p, base) and np.array_equal(pat_m, base)):
                discarded += 1
                continue
            ana.append(grads[name].reshape(-1)[i])
            num.append((fp - fm) / (2 * eps))
        per_tensor[name] = relative_error(ana, num)
    groups = {}
    for name, err in per_tensor.items():
        g = param_group(name)
        groups[g] = max(groups.get(g, 0.0), err)
    return groups, per_tensor, discarded


def jittered_model(cfg, seed=0, scale=0.05):
    """float64 model with every parameter nudged off its initial value.

    Zero-initialized tensors (biases, the last conv of each residual block)
    would otherwise hide gradient paths from the check.
    """
    model = PanoTransformer(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for p in model.params.values():
        p += rng.normal(0.0, scale, p.shape)
    return model


def gradcheck_case(cfg, seed=0, batch=2):
    """Random panoramas, masks and targets kept away from the |d| = 0 kink."""
    rng = np.random.default_rng(seed)
    H, W = cfg.pano_size
    panos = rng.uniform(0, 1, (batch, H, W, 3))
    masks = rng.uniform(size=(batch, H, W)) < 0.4
    model = jittered_model(cfg, seed)
    x = model_input(panos, masks, cfg, np.float64)
    pred = output_to_pano(model.forward(x), cfg)
    offset = rng.uniform(0.05, 0.5, pred.shape) * rng.choice([-1.0, 1.0], pred.shape)
    return model, panos, masks, pred + offset
