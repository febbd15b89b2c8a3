"""Raster types and PNG persistence.

Conventions used throughout the package:

* an RGB image is a float64 array of shape ``(H, W, 3)``, channel-interleaved,
  values in [0, 1];
* an alpha matte is a float64 array of shape ``(H, W)`` in [0, 1];
* a trimap is a :class:`Trimap` holding per-pixel :class:`Region` labels;
* a region mask is a boolean ``(H, W)`` array.

Quantization only happens at PNG boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import cv2
import numpy as np

log = logging.getLogger(__name__)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
TRIMAP_BYTES = (0, 128, 255)
TRIMAP_SNAP = 8


class ImageError(ValueError):
    """Raised for missing, corrupt or out-of-contract image data."""


class Region(IntEnum):
    BACKGROUND = 0
    UNKNOWN = 1
    FOREGROUND = 2


# plane value and PNG byte per region, indexed by Region
_PLANE_VALUES = np.array([0.0, 0.5, 1.0])
_BYTE_VALUES = np.array(TRIMAP_BYTES, dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class Trimap:
    """Per-pixel three-way labelling of an image into known/unknown regions."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise ImageError(f"trimap labels must be a non-empty 2-D array, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > 2):
            raise ImageError("trimap labels must be BACKGROUND/UNKNOWN/FOREGROUND")
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def fg(self) -> np.ndarray:
        return self.labels == Region.FOREGROUND

    @property
    def bg(self) -> np.ndarray:
        return self.labels == Region.BACKGROUND

    @property
    def unknown(self) -> np.ndarray:
        return self.labels == Region.UNKNOWN

    def plane(self) -> np.ndarray:
        """Network input plane: BACKGROUND 0.0, UNKNOWN 0.5, FOREGROUND 1.0."""
        return _PLANE_VALUES[self.labels]

    def to_bytes(self) -> np.ndarray:
        return _BYTE_VALUES[self.labels]

    @classmethod
    def from_plane(cls, plane: np.ndarray) -> Trimap:
        plane = np.asarray(plane, dtype=np.float64)
        labels = np.rint(plane * 2.0).astype(np.int64)
        if not np.allclose(labels / 2.0, plane, atol=1e-6):
            raise ImageError("trimap plane values must be 0, 0.5 or 1")
        return cls(labels)

    @classmethod
    def from_bytes(cls, values: np.ndarray) -> Trimap:
        """Snap 8-bit values to {0, 128, 255}, tolerating +-8 levels."""
        values = np.asarray(values).astype(np.int64)
        dist = np.abs(values[..., None] - np.array(TRIMAP_BYTES))
        labels = dist.argmin(axis=-1)
        if (dist.min(axis=-1) > TRIMAP_SNAP).any():
            bad = np.unique(values[dist.min(axis=-1) > TRIMAP_SNAP])
            raise ImageError(f"not a trimap: values {bad[:8].tolist()} are not near 0/128/255")
        return cls(labels)

    def __eq__(self, other):
        if not isinstance(other, Trimap):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None


def check_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageError(f"expected an (H, W, 3) RGB image, got shape {image.shape}")
    _check_range(image)
    return image


def check_alpha(alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ImageError(f"expected an (H, W) alpha matte, got shape {alpha.shape}")
    _check_range(alpha)
    return alpha


def _check_range(data: np.ndarray) -> None:
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise ImageError("zero-sized image")
    if not np.isfinite(data).all() or data.min() < 0.0 or data.max() > 1.0:
        raise ImageError("raster values must lie in [0, 1]")


def _read_png(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"no such image file: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(PNG_MAGIC)) != PNG_MAGIC:
            raise ImageError(f"unsupported/corrupt image (not a PNG): {path}")
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageError(f"unsupported/corrupt image: {path}")
    if data.dtype not in (np.uint8, np.uint16):
        raise ImageError(f"unsupported bit depth {data.dtype} in {path}")
    if data.size == 0:
        raise ImageError(f"zero-sized image: {path}")
    return data


def _unit_scale(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float64) / float(np.iinfo(data.dtype).max)


def _to_rgb_order(data: np.ndarray, path) -> np.ndarray:
    if data.ndim == 2:
        return np.repeat(data[..., None], 3, axis=2)
    if data.shape[2] == 4:
        log.warning("ignoring alpha channel of %s", path)
        data = data[..., :3]
    return data[..., ::-1]


def load_rgb(path: str | Path) -> np.ndarray:
    """Load an 8- or 16-bit PNG as an RGB float image in [0, 1]."""
    data = _read_png(path)
    return np.ascontiguousarray(_unit_scale(_to_rgb_order(data, path)))


def _single_channel(data: np.ndarray, path) -> np.ndarray:
    if data.ndim == 2:
        return data
    if data.shape[2] == 4:
        data = data[..., :3]
    if not (np.array_equal(data[..., 0], data[..., 1]) and np.array_equal(data[..., 0], data[..., 2])):
        raise ImageError(f"multi-channel image with unequal channels cannot be a single plane: {path}")
    return data[..., 0]


def load_alpha(path: str | Path) -> np.ndarray:
    return _unit_scale(_single_channel(_read_png(path), path))


def quantize(values: np.ndarray, bit_depth: int) -> np.ndarray:
    """Round-half-up quantization of [0, 1] values to integer codes."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    top = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    codes = np.floor(np.clip(values, 0.0, 1.0) * top + 0.5)
    return codes.astype(dtype)


def _write_png(path: str | Path, data: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), data):
        raise ImageError(f"failed to write {path}")


def save_alpha(alpha: np.ndarray, path: str | Path, bit_depth: int = 16) -> None:
    _write_png(path, quantize(check_alpha(alpha), bit_depth))


def save_rgb(image: np.ndarray, path: str | Path, bit_depth: int = 16) -> None:
    codes = quantize(check_rgb(image), bit_depth)
    _write_png(path, np.ascontiguousarray(codes[..., ::-1]))


def load_trimap(path: str | Path) -> Trimap:
    data = _single_channel(_read_png(path), path)
    if data.dtype == np.uint16:
        data = np.floor(data / 257.0 + 0.5)
    return Trimap.from_bytes(data)


def save_trimap(trimap: Trimap, path: str | Path) -> None:
    _write_png(path, trimap.to_bytes())


def trimap_plane(trimap: Trimap) -> np.ndarray:
    return trimap.plane()
