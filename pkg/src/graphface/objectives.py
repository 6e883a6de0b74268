"""Training losses: pixel MSE, frozen-extractor perceptual MSE, and the
non-saturating adversarial pair, combined by a weighted sum."""
from dataclasses import dataclass

import numpy as np

from .backend import Tensor
from .backend.ops import add, mean, mul, neg, softplus, sub

LOSS_CSV_HEADER = "step,loss_pix,loss_per,loss_adv_G,loss_D,total"


@dataclass
class LossWeights:
    pixel: float = 1.0
    adversarial: float = 0.01
    perceptual: float = 0.0005

    def __post_init__(self):
        for name in ("pixel", "adversarial", "perceptual"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} weight must be non-negative, got {v}")


def pixel_loss(i_out, i_gt):
    """Mean squared error over all elements."""
    d = sub(i_out, i_gt)
    return mean(mul(d, d))


def perceptual_loss(i_out, i_gt, extractor):
    """Feature-space MSE summed over the two perceptual taps.

    The extractor must be frozen: its parameters receive no gradient, only
    i_out does. Any object exposing perceptual_taps() with 'conv2_2' and
    'conv5_4' keys works.
    """
    params = getattr(extractor, "parameters", None)
    if params is not None and any(p.requires_grad for p in extractor.parameters()):
        raise ValueError("perceptual extractor must be frozen (no trainable parameters)")
    gt = i_gt.detach() if isinstance(i_gt, Tensor) else Tensor(np.asarray(i_gt))
    taps_out = extractor.perceptual_taps(i_out)
    taps_gt = extractor.perceptual_taps(gt)
    total = None
    for key in ("conv2_2", "conv5_4"):
        if key not in taps_out or key not in taps_gt:
            raise ValueError(f"extractor does not expose required perceptual tap {key!r}")
        term = pixel_loss(taps_out[key], taps_gt[key])
        total = term if total is None else add(total, term)
    return total


def bce_with_logits(logit, target):
    """Binary cross-entropy of sigmoid(logit) against a constant 0/1 target."""
    if not np.isfinite(logit.data).all():
        raise ValueError("non-finite logits")
    if target == 1:
        return mean(softplus(neg(logit)))
    if target == 0:
        return mean(softplus(logit))
    raise ValueError(f"target must be 0 or 1, got {target}")


def adversarial_losses(d_logit_real, d_logit_fake):
    """Non-saturating GAN pair: (discriminator loss, generator loss).

    loss_D drives real logits up and fake logits down; loss_G drives fake
    logits up. Sigmoid is folded into the numerically stable form.
    """
    loss_d = add(bce_with_logits(d_logit_real, 1), bce_with_logits(d_logit_fake, 0))
    loss_g = bce_with_logits(d_logit_fake, 1)
    return loss_d, loss_g


def total_generator_loss(parts, weights):
    """Weighted sum of (pixel, adversarial, perceptual) scalar losses."""
    pix, adv, per = parts
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    for name, part in (("pixel", pix), ("adversarial", adv), ("perceptual", per)):
        value = part.data if isinstance(part, Tensor) else part
        if np.size(value) != 1:
            raise ValueError(f"{name} loss must be scalar")
        if not np.isfinite(value).all():
            raise ValueError(f"{name} loss is non-finite")
    total = mul(_as_t(pix), weights.pixel)
    total = add(total, mul(_as_t(adv), weights.adversarial))
    return add(total, mul(_as_t(per), weights.perceptual))


def _as_t(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
