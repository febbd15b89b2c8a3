"""Compositing and training-sample augmentation.

All randomness comes from ``numpy.random.Generator`` objects; a sample is a pure
function of its inputs, the config and its per-sample stream, so datasets can
be regenerated (or resumed) exactly.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .imgcore import (
    ImageError,
    Region,
    Trimap,
    check_alpha,
    check_rgb,
    load_alpha,
    load_rgb,
    save_alpha,
    save_rgb,
    save_trimap,
)

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class DegenerateAlphaError(ValueError):
    pass


@dataclass(frozen=True)
class SourceItem:
    foreground: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        fg = check_rgb(self.foreground)
        alpha = check_alpha(self.alpha)
        if fg.shape[:2] != alpha.shape:
            raise ImageError(f"foreground {fg.shape[:2]} and alpha {alpha.shape} differ in size")
        object.__setattr__(self, "foreground", fg)
        object.__setattr__(self, "alpha", alpha)


@dataclass
class TrainingSample:
    composite: np.ndarray
    trimap: Trimap
    alpha_gt: np.ndarray
    foreground: np.ndarray
    background: np.ndarray
    params: dict = field(default_factory=dict)


@dataclass
class AugmentConfig:
    rotation_std_deg: float = 5.0
    dilation_kmin: int = 2
    dilation_kmax: int = 20
    crop_min: int = 320
    crop_max: int = 720
    out_size: int = 320
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.dilation_kmin <= self.dilation_kmax:
            raise ValueError("need 0 < dilation_kmin <= dilation_kmax")
        if self.dilation_kmin < 2:
            raise ValueError("trimap dilation kernel must be at least 2")
        if not 0 < self.crop_min <= self.crop_max:
            raise ValueError("need 0 < crop_min <= crop_max")
        if self.out_size <= 0 or self.out_size % 32:
            raise ValueError(f"out_size must be a positive multiple of 32, got {self.out_size}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be a probability")
        if self.rotation_std_deg < 0:
            raise ValueError("rotation_std_deg must be non-negative")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``alpha * fg + (1 - alpha) * bg`` per channel."""
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise ImageError(f"dimension mismatch: fg {fg.shape}, bg {bg.shape}, alpha {alpha.shape}")
    a = alpha[..., None]
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0)


def _rotate_plane(plane: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    return ndimage.affine_transform(
        plane, matrix, offset=offset, order=1, mode="grid-constant", cval=0.0, prefilter=False
    )


def rotate_fg_alpha(item: SourceItem, degrees: float) -> SourceItem:
    """Rotate foreground and alpha about the image centre (counter-clockwise as displayed).

    Bilinear sampling; reads outside the image are 0, so the uncovered margin
    becomes transparent.
    """
    h, w = item.alpha.shape
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    # maps output (row, col) to input (row, col)
    matrix = np.array([[c, s], [-s, c]])
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - matrix @ centre
    alpha = np.clip(_rotate_plane(item.alpha, matrix, offset), 0.0, 1.0)
    fg = np.stack([_rotate_plane(item.foreground[..., ch], matrix, offset) for ch in range(3)], axis=2)
    return SourceItem(np.clip(fg, 0.0, 1.0), alpha)


def _boundary_seed(alpha: np.ndarray) -> np.ndarray:
    seed = (alpha > 0.0) & (alpha < 1.0)
    if seed.any():
        return seed
    zero = ndimage.maximum_filter((alpha == 0.0).astype(np.uint8), size=3, mode="constant", cval=0)
    one = ndimage.maximum_filter((alpha == 1.0).astype(np.uint8), size=3, mode="constant", cval=0)
    return (zero > 0) & (one > 0)


def dilate(mask: np.ndarray, k: int) -> np.ndarray:
    """Binary dilation by a k x k square; each set pixel spreads to offsets ``-((k-1)//2) .. k//2``."""
    out = ndimage.maximum_filter(mask.astype(np.uint8), size=k, mode="constant", cval=0)
    return out > 0


def synthesize_trimap(alpha: np.ndarray, k: int) -> Trimap:
    """Trimap whose unknown band is the k x k dilation of the alpha boundary.

    The boundary is the set of fractional pixels; for a binary matte it falls
    back to pixels whose 3x3 neighbourhood holds both a 0 and a 1.
    """
    if k < 2:
        raise ValueError(f"dilation kernel must be >= 2, got {k}")
    alpha = check_alpha(alpha)
    if (alpha == 0.0).all() or (alpha == 1.0).all():
        raise DegenerateAlphaError("degenerate alpha: constant 0 or 1, no boundary exists")
    unknown = dilate(_boundary_seed(alpha), k)
    labels = np.full(alpha.shape, Region.UNKNOWN, dtype=np.uint8)
    labels[(alpha == 1.0) & ~unknown] = Region.FOREGROUND
    labels[(alpha == 0.0) & ~unknown] = Region.BACKGROUND
    return Trimap(labels)


def crop_unknown_centered(
    planes: dict[str, np.ndarray], trimap: Trimap, size: int, rng: np.random.Generator
) -> tuple[dict[str, np.ndarray], Trimap, dict]:
    """Square crop of side ``size`` centred on a random unknown pixel.

    The window is shifted (never shrunk) to stay inside the image. Returns the
    cropped planes, the cropped trimap and the window parameters.
    """
    h, w = trimap.shape
    ys, xs = np.nonzero(trimap.unknown)
    if ys.size == 0:
        raise ValueError("trimap has no unknown region to centre a crop on")
    if size > min(h, w):
        log.warning("crop size %d exceeds image %dx%d; shrinking to %d", size, h, w, min(h, w))
        size = min(h, w)
    pick = int(rng.integers(ys.size))
    cy, cx = int(ys[pick]), int(xs[pick])
    top = min(max(cy - size // 2, 0), h - size)
    left = min(max(cx - size // 2, 0), w - size)
    window = (slice(top, top + size), slice(left, left + size))
    cropped = {name: plane[window] for name, plane in planes.items()}
    params = {"center": [cy, cx], "top": top, "left": left, "size": size}
    return cropped, Trimap(trimap.labels[window]), params


def resize_sample(
    planes: dict[str, np.ndarray], trimap: Trimap, out_size: int
) -> tuple[dict[str, np.ndarray], Trimap]:
    """Bilinear resize of image planes, nearest-neighbour resize of trimap labels."""
    if trimap.shape == (out_size, out_size):
        return dict(planes), trimap
    h, w = trimap.shape
    dsize = (out_size, out_size)
    resized = {
        name: np.clip(cv2.resize(plane, dsize, interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
        for name, plane in planes.items()
    }
    labels = cv2.resize(trimap.labels, dsize, interpolation=cv2.INTER_NEAREST)
    if not (labels == Region.UNKNOWN).any():
        # a very thin unknown band can fall between nearest-neighbour taps
        labels = labels.copy()
        unk_y, unk_x = np.nonzero(trimap.unknown)
        labels[min(int(unk_y[0] * out_size / h), out_size - 1),
               min(int(unk_x[0] * out_size / w), out_size - 1)] = Region.UNKNOWN
    return resized, Trimap(labels)


def prepare_background(bg: np.ndarray, height: int, width: int) -> np.ndarray:
    """Aspect-filling bilinear resize followed by a centre crop to ``height x width``."""
    bh, bw = bg.shape[:2]
    scale = max(height / bh, width / bw)
    nh, nw = max(height, math.ceil(bh * scale)), max(width, math.ceil(bw * scale))
    if (nh, nw) != (bh, bw):
        bg = np.clip(cv2.resize(bg, (nw, nh), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
    top, left = (nh - height) // 2, (nw - width) // 2
    return np.ascontiguousarray(bg[top:top + height, left:left + width])


def make_training_sample(
    item: SourceItem, bg: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> TrainingSample:
    h, w = item.alpha.shape
    bg = prepare_background(check_rgb(bg), h, w)

    angle = float(rng.normal(0.0, cfg.rotation_std_deg)) if cfg.rotation_std_deg > 0 else 0.0
    rotated = rotate_fg_alpha(item, angle) if angle != 0.0 else item
    k = int(rng.integers(cfg.dilation_kmin, cfg.dilation_kmax + 1))
    trimap = synthesize_trimap(rotated.alpha, k)

    size = int(rng.integers(cfg.crop_min, cfg.crop_max + 1))
    planes = {"fg": rotated.foreground, "alpha": rotated.alpha, "bg": bg}
    planes, trimap, crop = crop_unknown_centered(planes, trimap, size, rng)
    planes, trimap = resize_sample(planes, trimap, cfg.out_size)

    flip = bool(rng.random() < cfg.flip_prob)
    if flip:
        planes = {name: np.ascontiguousarray(p[:, ::-1]) for name, p in planes.items()}
        trimap = Trimap(trimap.labels[:, ::-1])

    return TrainingSample(
        composite=composite(planes["fg"], planes["bg"], planes["alpha"]),
        trimap=trimap,
        alpha_gt=planes["alpha"],
        foreground=planes["fg"],
        background=planes["bg"],
        params={"angle": angle, "k": k, "crop": crop, "flip": flip},
    )


def _png_stems(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(directory.glob("*.png"))}


def paired_sources(fg_dir, alpha_dir) -> list[tuple[str, Path, Path]]:
    fgs, alphas = _png_stems(Path(fg_dir)), _png_stems(Path(alpha_dir))
    if fgs.keys() != alphas.keys():
        missing = sorted(fgs.keys() ^ alphas.keys())
        raise ValueError(f"foreground/alpha stems do not match: {missing[:10]}")
    if not fgs:
        raise ValueError(f"no foreground PNGs in {fg_dir}")
    return [(stem, fgs[stem], alphas[stem]) for stem in sorted(fgs)]


def background_pool(bg_dir) -> list[Path]:
    pool = sorted(_png_stems(Path(bg_dir)).values())
    if not pool:
        raise ValueError(f"empty background pool: {bg_dir}")
    return pool


class CompositingDataset:
    """Unbounded, index-addressed stream of augmented training samples.

    Sample ``i`` draws its background and augmentation from ``sample_rng(seed, i)``
    and uses foreground ``i mod n_foregrounds``.
    """

    def __init__(self, sources: list[tuple[str, Path, Path]], backgrounds: list[Path],
                 cfg: AugmentConfig, seed: int | None = None):
        if not backgrounds:
            raise ValueError("empty background pool")
        self.sources = sources
        self.backgrounds = backgrounds
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self._items: dict[int, SourceItem] = {}

    @classmethod
    def from_dirs(cls, fg_dir, alpha_dir, bg_dir, cfg: AugmentConfig, seed: int | None = None):
        return cls(paired_sources(fg_dir, alpha_dir), background_pool(bg_dir), cfg, seed)

    def _item(self, i: int) -> SourceItem:
        if i not in self._items:
            _, fg_path, alpha_path = self.sources[i]
            self._items[i] = SourceItem(load_rgb(fg_path), load_alpha(alpha_path))
        return self._items[i]

    def __getitem__(self, index: int) -> TrainingSample:
        if index < 0:
            raise IndexError(index)
        rng = sample_rng(self.seed, index)
        src = index % len(self.sources)
        bg_index = int(rng.integers(len(self.backgrounds)))
        sample = make_training_sample(self._item(src), load_rgb(self.backgrounds[bg_index]), self.cfg, rng)
        sample.params.update(foreground=self.sources[src][0], background=self.backgrounds[bg_index].stem)
        return sample


LAYOUT = ("composite", "trimap", "alpha", "fg", "bg")


def build_composition_set(fg_dir, alpha_dir, bg_dir, out_dir, per_fg: int, seed: int,
                          cfg: AugmentConfig | None = None, bit_depth: int = 16,
                          workers: int = 1) -> dict:
    """Composite ``per_fg`` test images per foreground onto seeded random backgrounds.

    Images keep the foreground's resolution (no augmentation); each gets a trimap
    dilated with a seeded kernel size. Writes the directory layout plus
    ``manifest.json`` and returns the manifest.
    """
    if per_fg < 1:
        raise ValueError("per_fg must be >= 1")
    cfg = cfg or AugmentConfig(seed=seed)
    sources = paired_sources(fg_dir, alpha_dir)
    pool = background_pool(bg_dir)
    out = Path(out_dir)
    for sub in LAYOUT:
        (out / sub).mkdir(parents=True, exist_ok=True)

    def emit(index: int) -> dict:
        stem, fg_path, alpha_path = sources[index // per_fg]
        rng = sample_rng(seed, index)
        bg_path = pool[int(rng.integers(len(pool)))]
        k = int(rng.integers(cfg.dilation_kmin, cfg.dilation_kmax + 1))
        fg, alpha = load_rgb(fg_path), load_alpha(alpha_path)
        if fg.shape[:2] != alpha.shape:
            raise ImageError(f"{stem}: foreground and alpha sizes differ")
        bg = prepare_background(load_rgb(bg_path), *alpha.shape)
        trimap = synthesize_trimap(alpha, k)
        name = f"{stem}_{index % per_fg:03d}.png"
        save_rgb(composite(fg, bg, alpha), out / "composite" / name, bit_depth)
        save_trimap(trimap, out / "trimap" / name)
        save_alpha(alpha, out / "alpha" / name, bit_depth)
        save_rgb(fg, out / "fg" / name, bit_depth)
        save_rgb(bg, out / "bg" / name, bit_depth)
        return {"name": name, "index": index, "foreground": fg_path.name,
                "background": bg_path.name, "k": k, "height": alpha.shape[0], "width": alpha.shape[1]}

    total = len(sources) * per_fg
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool_exec:
        records = list(pool_exec.map(emit, range(total)))

    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "per_fg": per_fg,
        "bit_depth": bit_depth,
        "config": asdict(cfg),
        "samples": records,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
