"""Alpha-prediction, compositional and adversarial losses.

Tensors are batched ``(N, C, H, W)``; ``unknown`` is a boolean ``(N, 1, H, W)``
mask and the matting losses only ever read pixels inside it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch

EPS = 1e-6
EPS_LOG = 1e-7


@dataclass
class LossReport:
    l_alpha: float
    l_comp: float
    l_gan_g: float
    l_gan_d: float
    total_g: float

    def to_json(self, step: int, wall_ms: float) -> str:
        return json.dumps({"step": step, **asdict(self), "wall_ms": round(wall_ms, 3)})


def charbonnier(diff: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    return torch.sqrt(diff * diff + eps * eps)


def _unknown_count(unknown: torch.Tensor) -> torch.Tensor:
    count = unknown.sum()
    if count.item() == 0:
        raise ValueError("unknown region is empty")
    return count


def alpha_prediction_loss(alpha_pred, alpha_gt, unknown, eps: float = EPS) -> torch.Tensor:
    """Mean Charbonnier distance between predicted and true alpha over unknown pixels."""
    count = _unknown_count(unknown)
    per_pixel = charbonnier(alpha_pred - alpha_gt, eps)
    return torch.where(unknown, per_pixel, torch.zeros_like(per_pixel)).sum() / count


def composition_loss(alpha_pred, fg, bg, composite_gt, unknown, eps: float = EPS) -> torch.Tensor:
    """Mean Charbonnier distance between the re-composited and the true image (per channel)."""
    count = _unknown_count(unknown)
    recomposed = alpha_pred * fg + (1.0 - alpha_pred) * bg
    per_pixel = charbonnier(recomposed - composite_gt, eps)
    mask = unknown.expand_as(per_pixel)
    return torch.where(mask, per_pixel, torch.zeros_like(per_pixel)).sum() / (count * per_pixel.shape[1])


def gan_loss_d(d_real, d_fake, eps_log: float = EPS_LOG) -> torch.Tensor:
    """Negated discriminator objective, averaged over the batch (or over patches)."""
    d_real = torch.as_tensor(d_real).clamp(eps_log, 1.0 - eps_log)
    d_fake = torch.as_tensor(d_fake).clamp(eps_log, 1.0 - eps_log)
    return -(torch.log(d_real) + torch.log1p(-d_fake)).mean()


def gan_loss_g(d_fake, saturating: bool = False, eps_log: float = EPS_LOG) -> torch.Tensor:
    """Generator adversarial term: ``-log D(fake)``, or ``log(1 - D(fake))`` when saturating."""
    d_fake = torch.as_tensor(d_fake).clamp(eps_log, 1.0 - eps_log)
    if saturating:
        return torch.log1p(-d_fake).mean()
    return -torch.log(d_fake).mean()


def _scalar(value) -> float:
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def total_generator_loss(l_alpha, l_comp, l_gan_g=None, l_gan_d=None,
                         weights: tuple[float, float, float] = (1.0, 1.0, 1.0)):
    """Weighted sum of the generator losses and a report of each part.

    A missing adversarial term (GAN disabled) counts as 0.
    """
    w_alpha, w_comp, w_gan = weights
    total = w_alpha * l_alpha + w_comp * l_comp
    if l_gan_g is not None:
        total = total + w_gan * l_gan_g
    report = LossReport(
        l_alpha=_scalar(l_alpha),
        l_comp=_scalar(l_comp),
        l_gan_g=0.0 if l_gan_g is None else _scalar(l_gan_g),
        l_gan_d=0.0 if l_gan_d is None else _scalar(l_gan_d),
        total_g=_scalar(total),
    )
    return total, report
