"""Reverse Huber (berHu) reconstruction loss and non-saturating GAN losses."""
import numpy as np

from .nn import sigmoid, softplus


def reverse_huber(pred, target, T=0.2):
    """Mean berHu loss: ``|d|`` for ``|d| <= T``, ``(d^2 + T^2) / (2T)`` above."""
    if T <= 0:
        raise ValueError("threshold T must be positive")
    d = np.abs(np.asarray(target, dtype=np.float64) - np.asarray(pred, dtype=np.float64))
    return float(np.where(d <= T, d, (d * d + T * T) / (2 * T)).mean())


def reverse_huber_elementwise_grad(pred, target, T=0.2):
    """Derivative of the per-element loss with respect to ``pred``.

    ``sign(pred - target)`` inside the threshold, ``(pred - target) / T``
    outside; both equal +-1 at the knee.
    """
    r = np.asarray(pred) - np.asarray(target)
    return np.where(np.abs(r) <= T, np.sign(r), r / T)


def reverse_huber_grad(pred, target, T=0.2):
    """Gradient of :func:`reverse_huber` (the mean) with respect to ``pred``."""
    g = reverse_huber_elementwise_grad(pred, target, T)
    return (g / g.size).astype(np.asarray(pred).dtype, copy=False)


def gan_losses(real_logits, fake_logits):
    """Non-saturating logistic GAN losses ``(loss_D, loss_G_adv)``."""
    real = np.asarray(real_logits, dtype=np.float64)
    fake = np.asarray(fake_logits, dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError(f"logit shapes differ: {real.shape} vs {fake.shape}")
    loss_d = softplus(-real).mean() + softplus(fake).mean()
    loss_g = softplus(-fake).mean()
    return float(loss_d), float(loss_g)


def gan_losses_grad(real_logits, fake_logits):
    """``(dLD/dreal, dLD/dfake, dLG/dfake)``."""
    real = np.asarray(real_logits)
    fake = np.asarray(fake_logits)
    n = real.size
    return -sigmoid(-real) / n, sigmoid(fake) / n, -sigmoid(-fake) / n
