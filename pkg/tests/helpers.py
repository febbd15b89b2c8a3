"""Synthetic sources and checking tools shared across tests (no external data needed)."""

from __future__ import annotations

import cv2
import numpy as np
import torch

from alphagan.datapipe import SourceItem
from alphagan.generator import init_weights
from alphagan.imgcore import save_alpha, save_rgb


def smooth_field(rng, h, w, channels=3):
    """Low-frequency random colours in [0, 1]."""
    small = rng.random((4, 4, channels))
    field = cv2.resize(small, (w, h), interpolation=cv2.INTER_CUBIC)
    field = np.clip(field, 0.0, 1.0)
    return field if channels > 1 else field[..., 0]


def blob_alpha(rng, h, w=None):
    """Star-shaped opaque blob with a soft rim, transparent elsewhere."""
    w = w or h
    size = min(h, w)
    yy, xx = np.mgrid[:h, :w]
    cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    radius = rng.uniform(0.2, 0.3) * size
    angle = np.arctan2(yy - cy, xx - cx)
    rim = radius * (1 + 0.15 * np.sin(rng.integers(3, 8) * angle + rng.uniform(0, 6)))
    dist = np.hypot(yy - cy, xx - cx) - rim
    return np.clip(0.5 - dist / rng.uniform(3, 8), 0.0, 1.0)


def make_source(rng, h, w=None):
    w = w or h
    return SourceItem(smooth_field(rng, h, w), blob_alpha(rng, h, w)), smooth_field(rng, h, w)


def write_source_dirs(root, n_fg, n_bg, size, seed=0):
    """fg/, alpha/, bg/ PNG folders with ``n_fg`` foregrounds and ``n_bg`` backgrounds."""
    rng = np.random.default_rng(seed)
    for i in range(n_fg):
        item, _ = make_source(rng, size)
        save_rgb(item.foreground, root / "fg" / f"obj{i:02d}.png", 8)
        save_alpha(item.alpha, root / "alpha" / f"obj{i:02d}.png", 8)
    for j in range(n_bg):
        save_rgb(smooth_field(rng, size + 8 * j, size + 4), root / "bg" / f"bg{j:02d}.png", 8)
    return root


def random_pair(seed, h, w):
    """Quantized random mattes with opaque and transparent areas so every metric is exercised."""
    r = np.random.default_rng(seed)
    gt = np.clip(np.round(r.random((h, w)) * 1.6 - 0.3, 1), 0, 1)
    pred = np.clip(gt + r.normal(0, 0.25, (h, w)) * (r.random((h, w)) < 0.5), 0, 1)
    pred[r.random((h, w)) < 0.2] = 1.0
    unknown = r.random((h, w)) < 0.7
    return pred, gt, unknown


def pretrained_like(cfg, seed=0):
    """Encoder tensors shaped like a 3-channel classifier with the same widths."""
    encoder = init_weights(cfg, seed=seed + 100).encoder
    g = torch.Generator().manual_seed(seed)
    source = {}
    for name, t in encoder.state_dict().items():
        if name == "conv1.weight":
            t = t[:, :3]
        if name.endswith(("bn1.weight", "bn2.weight", "bn3.weight")):
            t = t + 0.1 * torch.randn(t.shape, generator=g)
        source[name] = t.clone()
    source["fc.weight"] = torch.zeros(10, 4)
    return source


FD_STEP = 1e-4


def finite_difference_check(loss_fn, alpha, n_coords=100, seed=0, smooth_between=None):
    """Worst relative error between autograd and central differences at random coordinates.

    ``smooth_between(plus, minus)`` may veto coordinates whose difference
    interval crosses a kink of a piecewise-linear network; vetoed coordinates
    are replaced by fresh draws so ``n_coords`` are always compared.
    """
    alpha = alpha.clone().requires_grad_(True)
    loss_fn(alpha).backward()
    analytic = alpha.grad.detach().flatten()
    flat = alpha.detach().flatten()
    order = np.random.default_rng(seed).permutation(flat.numel())
    worst, checked = 0.0, 0
    with torch.no_grad():
        for c in order:
            plus, minus = flat.clone(), flat.clone()
            plus[c] += FD_STEP
            minus[c] -= FD_STEP
            plus, minus = plus.view_as(alpha), minus.view_as(alpha)
            if smooth_between is not None and not smooth_between(plus, minus):
                continue
            numeric = (loss_fn(plus) - loss_fn(minus)).item() / (2 * FD_STEP)
            a = analytic[c].item()
            scale = max(abs(a), abs(numeric))
            if scale > 0:
                worst = max(worst, abs(a - numeric) / scale)
            checked += 1
            if checked == n_coords:
                return worst
    raise AssertionError(f"only {checked} usable coordinates")


def activation_pattern(disc, stack):
    """Signs of every leaky-ReLU input: the linear piece the network is on."""
    signs = []
    hooks = [m.register_forward_pre_hook(lambda mod, inp: signs.append(inp[0] > 0))
             for m in disc.modules() if isinstance(m, torch.nn.LeakyReLU)]
    try:
        disc(stack)
    finally:
        for h in hooks:
            h.remove()
    return signs
