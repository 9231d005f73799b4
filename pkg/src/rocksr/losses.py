"""Training objectives and the PSNR metric.

All losses are differentiable scalars built from tape ops.  PSNR is
defined directly off the mean squared error in the [-1, 1] pixel domain
(peak-to-peak = 2, so PSNR = 10*log10(4 / L2)); computing it that way
keeps the PSNR/L2 identity exact rather than approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

# classifier targets: real (HR) patches score 1, generated patches 0
Y_HR = 1
Y_SR = 0

_P_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Generator objective weights: total = l1 + alpha*feature + beta*adversarial."""

    alpha: float = 1e-5
    beta: float = 5e-3

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


def l2_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean squared error."""
    return ad.mean(ad.square(ad.sub(sr, hr)))


def l1_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute error."""
    return ad.mean(ad.absolute(ad.sub(sr, hr)))


def psnr_from_l2(l2: float) -> float:
    """PSNR in dB for pixels in [-1, 1]; exact zero error gives +inf."""
    if l2 < 0:
        raise ValueError(f"mean squared error cannot be negative, got {l2}")
    if l2 == 0:
        return math.inf
    return 10.0 * math.log10(4.0 / l2)


def psnr(sr, hr) -> float:
    """PSNR between two arrays or tensors in the [-1, 1] domain."""
    a = sr.data if isinstance(sr, Tensor) else np.asarray(sr)
    b = hr.data if isinstance(hr, Tensor) else np.asarray(hr)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return psnr_from_l2(float(np.mean(diff * diff)))


def bxe_loss(p: Tensor, label: int) -> Tensor:
    """Binary cross-entropy of probabilities against a constant label.

    label=1 scores -mean(log p); label=0 scores -mean(log(1 - p)).
    Probabilities are clamped away from {0, 1} so saturated classifier
    outputs produce large finite losses instead of infinities.
    """
    if label not in (0, 1):
        raise ValueError(f"bxe label must be 0 or 1, got {label}")
    p = ad.clamp(p, _P_CLAMP, 1.0 - _P_CLAMP)
    if label == 1:
        return ad.neg(ad.mean(ad.log(p)))
    one_minus = ad.add(ad.neg(p), 1.0)
    return ad.neg(ad.mean(ad.log(one_minus)))


def d_loss(p_hr: Tensor, p_sr: Tensor) -> Tensor:
    """Discriminator objective: real patches toward 1, generated toward 0."""
    return ad.add(bxe_loss(p_hr, Y_HR), bxe_loss(p_sr, Y_SR))


def adversarial_loss(p_sr: Tensor) -> Tensor:
    """Generator's GAN term: push the classifier's score on SR toward 1."""
    return bxe_loss(p_sr, Y_HR)


def feature_loss(phi_sr: Tensor, phi_hr: Tensor) -> Tensor:
    """Mean squared error between feature maps."""
    if phi_sr.shape != phi_hr.shape:
        raise ShapeError(
            f"feature maps must match, got {phi_sr.shape} vs {phi_hr.shape}"
        )
    return ad.mean(ad.square(ad.sub(phi_sr, phi_hr)))


def g_loss(
    sr: Tensor,
    hr: Tensor,
    weights: LossWeights,
    phi_sr: Tensor | None = None,
    phi_hr: Tensor | None = None,
    p_sr: Tensor | None = None,
) -> tuple[Tensor, dict]:
    """Combined generator objective and its per-term values.

    Terms with zero weight are skipped entirely: with alpha = beta = 0
    the returned tensor IS the L1 loss, so a pixel-only schedule and the
    full objective at zero weights are the same computation, not merely
    close.  Non-zero weights require their inputs.
    """
    l1 = l1_loss(sr, hr)
    total = l1
    parts = {"l1": float(l1.data), "feature": 0.0, "adversarial": 0.0}
    if weights.alpha > 0:
        if phi_sr is None or phi_hr is None:
            raise ValueError("alpha > 0 requires feature maps for both images")
        feat = feature_loss(phi_sr, phi_hr)
        parts["feature"] = float(feat.data)
        total = ad.add(total, ad.mul(feat, weights.alpha))
    if weights.beta > 0:
        if p_sr is None:
            raise ValueError("beta > 0 requires classifier scores for the SR batch")
        adv = adversarial_loss(p_sr)
        parts["adversarial"] = float(adv.data)
        total = ad.add(total, ad.mul(adv, weights.beta))
    parts["total"] = float(total.data)
    return total, parts
