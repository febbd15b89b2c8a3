"""Alternating generator/discriminator training, checkpoints and padded inference."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, manifest_hash, save_checkpoint
from .config import RunConfig
from .datapipe import TrainingSample
from .discriminator import PatchDiscriminator, composite_stack, init_discriminator
from .generator import Generator, architecture_manifest, generator_forward, init_weights, pad_to_multiple, tensor_manifest
from .imgcore import Trimap, check_rgb
from .losses import LossReport, alpha_prediction_loss, composition_loss, gan_loss_d, gan_loss_g, total_generator_loss

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, component: str, value: float):
        super().__init__(f"non-finite {component} = {value} at step {step}")
        self.step, self.component, self.value = step, component, value


def architecture_hash(cfg: RunConfig) -> str:
    with torch.device("meta"):
        disc = PatchDiscriminator(cfg.discriminator)
    return manifest_hash(architecture_manifest(cfg.generator), tensor_manifest(disc))


@dataclass
class TrainState:
    generator: Generator
    discriminator: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    cfg: RunConfig
    step: int = 0

    @classmethod
    def create(cls, cfg: RunConfig, pretrained=None) -> TrainState:
        t = cfg.train
        gen = init_weights(cfg.generator, pretrained=pretrained, seed=t.seed)
        disc = init_discriminator(cfg.discriminator, seed=t.seed + 1)
        betas = (t.adam_beta1, t.adam_beta2)
        return cls(
            generator=gen,
            discriminator=disc,
            opt_g=torch.optim.Adam(gen.parameters(), lr=t.lr_g, betas=betas),
            opt_d=torch.optim.Adam(disc.parameters(), lr=t.lr_d, betas=betas),
            cfg=cfg,
        )

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            generator={k: v.clone() for k, v in self.generator.state_dict().items()},
            discriminator={k: v.clone() for k, v in self.discriminator.state_dict().items()},
            optimizers={"opt_g": self.opt_g.state_dict(), "opt_d": self.opt_d.state_dict()},
            step=self.step,
            rng={"torch": torch.get_rng_state(), "data_index": self.step * self.cfg.train.batch_size},
            config=self.cfg.to_dict(),
            manifest_hash=architecture_hash(self.cfg),
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: RunConfig | None = None) -> TrainState:
        """Rebuild training state; ``cfg`` may change training knobs but not the architecture."""
        cfg = cfg or RunConfig.from_dict(ckpt.config)
        if architecture_hash(cfg) != ckpt.manifest_hash:
            raise ValueError("checkpoint does not match the configured architecture")
        state = cls.create(cfg)
        state.generator.load_state_dict(ckpt.generator)
        state.discriminator.load_state_dict(ckpt.discriminator)
        if "opt_g" in ckpt.optimizers:
            state.opt_g.load_state_dict(ckpt.optimizers["opt_g"])
            state.opt_d.load_state_dict(ckpt.optimizers["opt_d"])
        for opt, lr in ((state.opt_g, cfg.train.lr_g), (state.opt_d, cfg.train.lr_d)):
            for group in opt.param_groups:
                group["lr"] = lr
                group["betas"] = (cfg.train.adam_beta1, cfg.train.adam_beta2)
        if "torch" in ckpt.rng:
            torch.set_rng_state(ckpt.rng["torch"])
        state.step = ckpt.step
        return state


def collate(samples: list[TrainingSample]) -> dict[str, torch.Tensor]:
    def rgb(name):
        return torch.from_numpy(np.stack([getattr(s, name).transpose(2, 0, 1) for s in samples])).float()

    def plane(arrays):
        return torch.from_numpy(np.stack(arrays)[:, None]).float()

    return {
        "composite": rgb("composite"),
        "fg": rgb("foreground"),
        "bg": rgb("background"),
        "alpha": plane([s.alpha_gt for s in samples]),
        "trimap": plane([s.trimap.plane() for s in samples]),
        "unknown": torch.from_numpy(np.stack([s.trimap.unknown for s in samples])[:, None]),
    }


def _check_finite(step: int, **values):
    for name, value in values.items():
        if value is None:
            continue
        value = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(value):
            raise NonFiniteLossError(step, name, value)


def _d_scores(disc, stack, per_patch):
    patches, means = disc(stack)
    return patches if per_patch else means


def fake_stack_batch(state: TrainState, batch: dict[str, torch.Tensor], alpha_pred: torch.Tensor) -> torch.Tensor:
    """Discriminator input for predicted alpha.

    Known pixels come from the ground truth so the adversarial term only sees
    unknown-region predictions.
    """
    alpha_fake = torch.where(batch["unknown"], alpha_pred, batch["alpha"])
    bg = batch["bg"].roll(1, dims=0) if state.cfg.train.fresh_background else batch["bg"]
    return composite_stack(batch["fg"], bg, alpha_fake, batch["trimap"])


def discriminator_step(state: TrainState, batch: dict[str, torch.Tensor], alpha_pred: torch.Tensor) -> torch.Tensor:
    """``d_steps_per_g`` updates of D on real vs (detached) fake stacks; returns the last loss."""
    t = state.cfg.train
    disc = state.discriminator
    disc.train()
    disc.requires_grad_(True)
    real = composite_stack(batch["fg"], batch["bg"], batch["alpha"], batch["trimap"])
    fake = fake_stack_batch(state, batch, alpha_pred.detach())
    for _ in range(t.d_steps_per_g):
        state.opt_d.zero_grad(set_to_none=True)
        loss_d = gan_loss_d(_d_scores(disc, real, t.per_patch), _d_scores(disc, fake, t.per_patch))
        _check_finite(state.step, l_gan_d=loss_d)
        loss_d.backward()
        state.opt_d.step()
    return loss_d.detach()


def generator_objective(state: TrainState, batch: dict[str, torch.Tensor], alpha_pred: torch.Tensor,
                        l_gan_d: torch.Tensor | None = None):
    """Weighted generator loss for ``alpha_pred`` and its report; D is held fixed."""
    t = state.cfg.train
    unknown = batch["unknown"]
    l_gan_g = None
    if t.gan_enabled:
        state.discriminator.requires_grad_(False)
        try:
            scores = _d_scores(state.discriminator, fake_stack_batch(state, batch, alpha_pred), t.per_patch)
        finally:
            state.discriminator.requires_grad_(True)
        l_gan_g = gan_loss_g(scores, saturating=t.saturating)
    l_alpha = alpha_prediction_loss(alpha_pred, batch["alpha"], unknown, t.eps)
    l_comp = composition_loss(alpha_pred, batch["fg"], batch["bg"], batch["composite"], unknown, t.eps)
    total, report = total_generator_loss(l_alpha, l_comp, l_gan_g, l_gan_d,
                                         weights=(t.w_alpha, t.w_comp, t.w_gan))
    _check_finite(state.step, l_alpha=l_alpha, l_comp=l_comp, l_gan_g=l_gan_g, total_g=total)
    return total, report


def train_step(state: TrainState, batch: dict[str, torch.Tensor]) -> LossReport:
    """One round of discriminator updates followed by one generator update."""
    state.generator.train()
    alpha_pred = state.generator(batch["composite"], batch["trimap"])
    l_gan_d = discriminator_step(state, batch, alpha_pred) if state.cfg.train.gan_enabled else None
    total, report = generator_objective(state, batch, alpha_pred, l_gan_d)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    state.step += 1
    return report


def batch_indices(step: int, batch_size: int, length: int | None) -> list[int]:
    start = step * batch_size
    idx = range(start, start + batch_size)
    return [i % length for i in idx] if length else list(idx)


def train_loop(dataset, cfg: RunConfig, out_dir=None, log_stream: IO[str] | None = None,
               state: TrainState | None = None, pretrained=None) -> TrainState:
    """Run ``cfg.train.steps`` steps (counted from ``state.step`` when resuming).

    ``dataset`` is anything indexable by sample number; finite sequences are cycled.
    Writes ``train_log.jsonl`` and checkpoints under ``out_dir`` when given.
    """
    state = state or TrainState.create(cfg, pretrained=pretrained)
    length = len(dataset) if hasattr(dataset, "__len__") else None
    out = Path(out_dir) if out_dir is not None else None
    own_log = None
    if log_stream is None and out is not None:
        out.mkdir(parents=True, exist_ok=True)
        own_log = log_stream = open(out / "train_log.jsonl", "a")
    try:
        while state.step < cfg.train.steps:
            t0 = time.perf_counter()
            batch = collate([dataset[i] for i in batch_indices(state.step, cfg.train.batch_size, length)])
            report = train_step(state, batch)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            if log_stream is not None:
                log_stream.write(report.to_json(state.step, wall_ms) + "\n")
                log_stream.flush()
            every = cfg.train.checkpoint_every
            if out is not None and every and state.step % every == 0:
                save_checkpoint(state.to_checkpoint(), out / f"ckpt_{state.step:06d}")
    finally:
        if own_log is not None:
            own_log.close()
    if out is not None:
        save_checkpoint(state.to_checkpoint(), out / "final")
    return state


def resume(directory, cfg: RunConfig | None = None) -> TrainState:
    expected = architecture_hash(cfg) if cfg is not None else None
    return TrainState.from_checkpoint(load_checkpoint(directory, expected_hash=expected), cfg)


def load_generator(directory) -> Generator:
    """Generator (in eval mode) from a checkpoint directory."""
    ckpt = load_checkpoint(directory)
    cfg = RunConfig.from_dict(ckpt.config)
    if architecture_hash(cfg) != ckpt.manifest_hash:
        raise ValueError(f"checkpoint {directory} is inconsistent with its own config")
    gen = Generator(cfg.generator)
    gen.load_state_dict(ckpt.generator)
    return gen.eval()


def predict(image: np.ndarray, trimap: Trimap, model: Generator, clamp_known: bool = True) -> np.ndarray:
    """Alpha for an image of any size: reflect-pad to a multiple of 32, run, crop back.

    With ``clamp_known`` the trimap's foreground/background are forced to 1/0.
    """
    image = check_rgb(image)
    if image.shape[:2] != trimap.shape:
        raise ValueError(f"image {image.shape[:2]} and trimap {trimap.shape} differ in size")
    padded, (h, w) = pad_to_multiple(image)
    labels, _ = pad_to_multiple(trimap.labels)
    alpha = generator_forward(model, padded, Trimap(labels))[:h, :w]
    alpha = np.clip(alpha, 0.0, 1.0)
    if clamp_known:
        alpha = alpha.copy()
        alpha[trimap.fg] = 1.0
        alpha[trimap.bg] = 0.0
    return alpha
