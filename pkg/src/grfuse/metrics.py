"""Fusion-quality metrics: mutual information, spatial frequency, average
gradient, plus SSIM reused from the loss module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, loss
from .errors import DimensionError


@dataclass
class MetricReport:
    mi: float
    sf: float
    ag: float
    ssim_ir: float
    ssim_vi: float

    def lines(self) -> list[str]:
        """key=value lines, locale-independent, 6 significant digits."""
        return [f"{k}={v:#.6g}" for k, v in vars(self).items()]


def _bin256(x: np.ndarray) -> np.ndarray:
    # floor(v * 255.999) pins the v == 1 boundary into the last bin
    return np.minimum((np.clip(x, 0.0, 1.0) * 255.999).astype(np.int64), 255)


def mutual_information(f: np.ndarray, src: np.ndarray) -> float:
    """MI in bits over a 256-bin joint histogram of [0,1] images."""
    if f.shape != src.shape:
        raise DimensionError(f"image shapes disagree: {f.shape} vs {src.shape}")
    joint = kernels.joint_hist256(_bin256(f), _bin256(src))
    joint = joint / f.size
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    ratio = np.ones_like(joint)
    np.divide(joint, pa * pb, out=ratio, where=mask)
    return float((joint[mask] * np.log2(ratio[mask])).sum())


def spatial_frequency(f: np.ndarray) -> float:
    """sqrt(RF^2 + CF^2) with RMS row/column first differences."""
    if f.ndim != 2 or f.shape[0] < 2 or f.shape[1] < 2:
        raise DimensionError(f"spatial_frequency needs h,w >= 2, got {f.shape}")
    rf2 = np.mean(np.diff(f, axis=1) ** 2)
    cf2 = np.mean(np.diff(f, axis=0) ** 2)
    return float(np.sqrt(rf2 + cf2))


def average_gradient(f: np.ndarray) -> float:
    """Mean over interior pixels of sqrt((dx^2 + dy^2)/2), forward diffs."""
    if f.ndim != 2 or f.shape[0] < 2 or f.shape[1] < 2:
        raise DimensionError(f"average_gradient needs h,w >= 2, got {f.shape}")
    dx = f[:-1, 1:] - f[:-1, :-1]
    dy = f[1:, :-1] - f[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def evaluate(fused: np.ndarray, ir: np.ndarray, vi: np.ndarray) -> MetricReport:
    """Metric sweep for one fused result; MI sums both source pairings."""
    return MetricReport(
        mi=mutual_information(fused, ir) + mutual_information(fused, vi),
        sf=spatial_frequency(fused),
        ag=average_gradient(fused),
        ssim_ir=loss.ssim(fused, ir),
        ssim_vi=loss.ssim(fused, vi),
    )
