"""SAD, MSE, gradient and connectivity errors over a trimap's unknown region.

Arguments are always ``(pred, gt, unknown)``: float alpha mattes in [0, 1]
and a boolean mask selecting the pixels that are summed.

Sums use ``math.fsum`` so results do not depend on summation order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import ImageError, load_alpha, load_trimap

log = logging.getLogger(__name__)

GRAD_SIGMA = 1.4
CONN_THETA = 0.15
CONN_DELTA = 0.1
REPORTING_SCALE = {"sad": 1e-3, "grad": 1e-3}
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _check(pred, gt, unknown):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    unknown = np.asarray(unknown, dtype=bool)
    if not (pred.shape == gt.shape == unknown.shape) or pred.ndim != 2:
        raise ImageError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, unknown {unknown.shape}")
    return pred, gt, unknown


def sad(pred, gt, unknown) -> float:
    """Raw sum of absolute differences; divide by 1000 for the usual reporting scale."""
    pred, gt, unknown = _check(pred, gt, unknown)
    return math.fsum(np.abs(pred - gt)[unknown])


def mse(pred, gt, unknown) -> float:
    pred, gt, unknown = _check(pred, gt, unknown)
    count = int(unknown.sum())
    if count == 0:
        raise ValueError("unknown region is empty")
    diff = (pred - gt)[unknown]
    return math.fsum(diff * diff) / count


def _gaussian_factors(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm 1-D Gaussian and its derivative, radius ceil(3 sigma)."""
    radius = math.ceil(3 * sigma)
    u = np.arange(-radius, radius + 1, dtype=np.float64)
    gauss = np.exp(-u**2 / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi))
    dgauss = -u * gauss / sigma**2
    return gauss / math.sqrt(np.sum(gauss * gauss)), dgauss / math.sqrt(np.sum(dgauss * dgauss))


def gaussian_derivative_kernels(sigma: float = GRAD_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """Unit-L2-norm first-derivative-of-Gaussian kernels (x, y), radius ceil(3 sigma)."""
    gauss, dgauss = _gaussian_factors(sigma)
    kx = np.outer(gauss, dgauss)  # varies along columns
    return kx, kx.T.copy()


def _antisymmetric_filter(plane: np.ndarray, dgauss: np.ndarray, axis: int) -> np.ndarray:
    """Correlate with an odd kernel as sum_u w_u (f[i+u] - f[i-u]); exact zero on constants."""
    radius = dgauss.size // 2
    pads = [(0, 0), (0, 0)]
    pads[axis] = (radius, radius)
    padded = np.pad(plane, pads, mode="symmetric")  # same border rule as ndimage "reflect"
    n = plane.shape[axis]
    out = np.zeros_like(plane)
    for u in range(1, radius + 1):
        ahead = np.take(padded, np.arange(radius + u, radius + u + n), axis=axis)
        behind = np.take(padded, np.arange(radius - u, radius - u + n), axis=axis)
        out += dgauss[radius + u] * (ahead - behind)
    return out


def gradient_magnitude(alpha: np.ndarray, sigma: float = GRAD_SIGMA) -> np.ndarray:
    """Separable form of correlating with :func:`gaussian_derivative_kernels`, reflected borders."""
    gauss, dgauss = _gaussian_factors(sigma)
    gx = _antisymmetric_filter(ndimage.correlate1d(alpha, gauss, axis=0, mode="reflect"), dgauss, axis=1)
    gy = _antisymmetric_filter(ndimage.correlate1d(alpha, gauss, axis=1, mode="reflect"), dgauss, axis=0)
    return np.sqrt(gx * gx + gy * gy)


def gradient_error(pred, gt, unknown, sigma: float = GRAD_SIGMA) -> float:
    """Sum over unknown pixels of squared gradient-magnitude differences (borders reflected)."""
    pred, gt, unknown = _check(pred, gt, unknown)
    diff = gradient_magnitude(pred, sigma) - gradient_magnitude(gt, sigma)
    return math.fsum((diff * diff)[unknown])


def threshold_levels(delta: float = CONN_DELTA) -> list[float]:
    steps = int(math.floor(1.0 / delta + 1e-9))
    return [j * delta for j in range(steps + 1)]


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected component; ties go to the one whose first pixel comes first in raster order."""
    labels, count = ndimage.label(mask, structure=FOUR_CONNECTED)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def _connected_level(alpha: np.ndarray, source: np.ndarray, levels) -> np.ndarray:
    level = np.zeros_like(alpha)
    for t in levels:
        labels, _ = ndimage.label(alpha >= t, structure=FOUR_CONNECTED)
        touching = np.unique(labels[source & (labels > 0)])
        level[np.isin(labels, touching) & (labels > 0)] = t
    return level


def _phi(alpha, source, levels, theta):
    d = alpha - _connected_level(alpha, source, levels)
    return 1.0 - d * (d >= theta)


def connectivity_error_flagged(pred, gt, unknown, theta: float = CONN_THETA,
                               delta: float = CONN_DELTA) -> tuple[float, bool]:
    """Connectivity error plus a flag that is True when no pixel is 1 in both mattes."""
    pred, gt, unknown = _check(pred, gt, unknown)
    source = largest_component((pred == 1.0) & (gt == 1.0))
    if not source.any():
        return 0.0, True
    levels = threshold_levels(delta)
    diff = np.abs(_phi(pred, source, levels, theta) - _phi(gt, source, levels, theta))
    return math.fsum(diff[unknown]), False


def connectivity_error(pred, gt, unknown, theta: float = CONN_THETA, delta: float = CONN_DELTA) -> float:
    value, degenerate = connectivity_error_flagged(pred, gt, unknown, theta, delta)
    if degenerate:
        log.warning("connectivity error undefined: no pixel is fully opaque in both mattes; reporting 0")
    return value


@dataclass
class ImageMetrics:
    name: str
    sad: float
    mse: float
    grad: float
    conn: float
    unknown: int
    conn_degenerate: bool = False


CSV_HEADER = ("name", "sad", "mse", "grad", "conn", "unknown", "conn_degenerate")


@dataclass
class MetricReport:
    records: list[ImageMetrics] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    scale: str = "raw"

    @property
    def aggregates(self) -> dict[str, float]:
        if not self.records:
            return {key: 0.0 for key in ("sad", "mse", "grad", "conn")}
        return {key: math.fsum(getattr(r, key) for r in self.records) / len(self.records)
                for key in ("sad", "mse", "grad", "conn")}

    def scaled(self, scale: str) -> MetricReport:
        """Copy with SAD and gradient either raw or divided by 1000 (the ``paper`` reporting scale)."""
        if scale not in ("raw", "paper"):
            raise ValueError(f"unknown scale {scale!r}")
        if scale == self.scale:
            return self
        factor = {k: (v if scale == "paper" else 1.0 / v) for k, v in REPORTING_SCALE.items()}
        records = [
            ImageMetrics(**{**asdict(r), "sad": r.sad * factor["sad"], "grad": r.grad * factor["grad"]})
            for r in self.records
        ]
        return MetricReport(records, dict(self.params), list(self.warnings), scale)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "params": self.params,
            "count": len(self.records),
            "aggregates": self.aggregates,
            "images": [asdict(r) for r in self.records],
            "warnings": self.warnings,
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path, csv_path = out / "metrics.json", out / "metrics.csv"
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.records:
                writer.writerow([getattr(r, key) for key in CSV_HEADER])
        return json_path, csv_path


def evaluate_pair(name: str, pred, gt, unknown, sigma=GRAD_SIGMA, theta=CONN_THETA,
                  delta=CONN_DELTA) -> ImageMetrics:
    conn, degenerate = connectivity_error_flagged(pred, gt, unknown, theta, delta)
    return ImageMetrics(
        name=name,
        sad=sad(pred, gt, unknown),
        mse=mse(pred, gt, unknown) if unknown.any() else 0.0,
        grad=gradient_error(pred, gt, unknown, sigma),
        conn=conn,
        unknown=int(unknown.sum()),
        conn_degenerate=degenerate,
    )


def evaluate_dirs(pred_dir, gt_dir, trimap_dir, sigma=GRAD_SIGMA, theta=CONN_THETA,
                  delta=CONN_DELTA, workers: int = 1) -> MetricReport:
    """Metrics for every ground-truth PNG that has a prediction and a trimap with the same stem."""
    pred_dir, gt_dir, trimap_dir = Path(pred_dir), Path(gt_dir), Path(trimap_dir)
    for d in (pred_dir, gt_dir, trimap_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    report = MetricReport(params={"sigma": sigma, "theta": theta, "delta": delta,
                                  "reporting_scale": REPORTING_SCALE})
    jobs = []
    for gt_path in sorted(gt_dir.glob("*.png")):
        pred_path = pred_dir / gt_path.name
        tri_path = trimap_dir / gt_path.name
        missing = [str(p) for p in (pred_path, tri_path) if not p.is_file()]
        if missing:
            msg = f"{gt_path.stem}: skipped, missing {', '.join(missing)}"
            log.warning(msg)
            report.warnings.append(msg)
            continue
        jobs.append((gt_path.stem, pred_path, gt_path, tri_path))

    def run(job):
        stem, pred_path, gt_path, tri_path = job
        return evaluate_pair(stem, load_alpha(pred_path), load_alpha(gt_path),
                             load_trimap(tri_path).unknown, sigma, theta, delta)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        report.records = list(pool.map(run, jobs))
    for r in report.records:
        if r.conn_degenerate:
            report.warnings.append(f"{r.name}: connectivity undefined (no common opaque pixel), reported 0")
    return report
