"""70x70 patch discriminator over RGB + trimap stacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .datapipe import TrainingSample, composite
from .imgcore import ImageError

KERNEL = 4
STRIDES = (2, 2, 2, 1, 1)
WIDTH_FACTORS = (1, 2, 4, 8)
LEAK = 0.2


def receptive_field(kernels, strides) -> int:
    """Input window seen by one output unit of a chain of convolutions."""
    field = 1
    for k, s in reversed(list(zip(kernels, strides))):
        field = field * s + (k - s)
    return field


@dataclass
class DiscriminatorConfig:
    base_width: int = 64
    input_channels: int = 4
    patch_size: int = 70

    def __post_init__(self):
        if self.base_width < 1:
            raise ValueError("base_width must be positive")
        field = receptive_field([KERNEL] * len(STRIDES), STRIDES)
        if field != self.patch_size:
            raise ValueError(f"layer ladder has a {field}x{field} receptive field, not {self.patch_size}")


class PatchDiscriminator(nn.Module):
    """C64-C128-C256-C512-C1 ladder; returns per-patch probabilities and their mean."""

    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or DiscriminatorConfig()
        widths = [cfg.base_width * f for f in WIDTH_FACTORS]
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.input_channels, widths[0], KERNEL, stride=STRIDES[0], padding=1),
            nn.LeakyReLU(LEAK, inplace=True),
        ]
        for cin, cout, stride in zip(widths, widths[1:], STRIDES[1:]):
            layers += [
                nn.Conv2d(cin, cout, KERNEL, stride=stride, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.LeakyReLU(LEAK, inplace=True),
            ]
        layers.append(nn.Conv2d(widths[-1], 1, KERNEL, stride=STRIDES[-1], padding=1))
        self.layers = nn.Sequential(*layers)

    @property
    def head(self) -> nn.Conv2d:
        return self.layers[-1]

    def forward(self, stack):
        h, w = stack.shape[-2:]
        if min(h, w) < self.cfg.patch_size:
            raise ValueError(f"input {h}x{w} is smaller than the {self.cfg.patch_size}px receptive field")
        patch_scores = torch.sigmoid(self.layers(stack))
        return patch_scores, patch_scores.mean(dim=(1, 2, 3))


def patch_grid(height: int, width: int) -> tuple[int, int]:
    def out(n):
        for s in STRIDES:
            n = (n + 2 - KERNEL) // s + 1
        return n

    return out(height), out(width)


def init_discriminator(cfg: DiscriminatorConfig | None = None, seed: int = 0) -> PatchDiscriminator:
    """Gaussian init (std 0.02) as is usual for this discriminator family."""
    model = PatchDiscriminator(cfg)
    gen = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, 0.02, generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02, generator=gen)
            nn.init.zeros_(m.bias)
    return model


def _stack(rgb: np.ndarray, plane: np.ndarray) -> np.ndarray:
    return np.concatenate([rgb.transpose(2, 0, 1), plane[None]], axis=0)


def real_stack(sample: TrainingSample) -> np.ndarray:
    """(4, H, W): ground-truth composite over the sample's background, then trimap plane."""
    rgb = composite(sample.foreground, sample.background, sample.alpha_gt)
    return _stack(rgb, sample.trimap.plane())


def fake_stack(sample: TrainingSample, alpha_pred: np.ndarray) -> np.ndarray:
    if alpha_pred.shape != sample.alpha_gt.shape:
        raise ImageError(f"predicted alpha {alpha_pred.shape} vs sample {sample.alpha_gt.shape}")
    rgb = composite(sample.foreground, sample.background, alpha_pred)
    return _stack(rgb, sample.trimap.plane())


def composite_stack(fg, bg, alpha, trimap_plane):
    """Batched tensor version of the stacks: (N, 4, H, W) from (N, 3|1, H, W) planes."""
    return torch.cat([alpha * fg + (1.0 - alpha) * bg, trimap_plane], dim=1)
