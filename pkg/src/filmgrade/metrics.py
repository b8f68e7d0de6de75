"""Image quality metrics: PSNR, global and windowed SSIM, and CIE76 color
difference in Lab space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ChannelError, DimensionError
from .fit import ssim as ssim_global
from .image_core import ImagePlane, srgb_array_to_lab

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim_global: float
    ssim_windowed: float
    delta_e_mean: float
    delta_e_p95: float


def _check_shapes(pred: ImagePlane, target: ImagePlane, op: str):
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"{op}: shape {pred.data.shape} does not match {target.data.shape}"
        )


def psnr(pred: ImagePlane, target: ImagePlane, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical images return inf."""
    _check_shapes(pred, target, "psnr")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _nearest_rank_p95(values: np.ndarray) -> float:
    ordered = np.sort(values, axis=None)
    rank = math.ceil(0.95 * ordered.size)
    return float(ordered[rank - 1])


def delta_e(pred: ImagePlane, target: ImagePlane):
    """Per-pixel Euclidean distance in CIELab (CIE76) between two sRGB
    images, reported as (mean, 95th-percentile by nearest rank). Values are
    clamped to [0,1] before conversion."""
    _check_shapes(pred, target, "delta_e")
    if pred.channels != 3:
        raise ChannelError(f"delta_e needs 3-channel images, got {pred.channels}")
    lab_a = srgb_array_to_lab(np.clip(pred.data.astype(np.float64), 0.0, 1.0))
    lab_b = srgb_array_to_lab(np.clip(target.data.astype(np.float64), 0.0, 1.0))
    dist = np.sqrt(np.sum((lab_a - lab_b) ** 2, axis=-1))
    return float(np.mean(dist)), _nearest_rank_p95(dist)


def _gaussian_taps(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _local_mean(field: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = convolve1d(field, taps, axis=0, mode="reflect")
    return convolve1d(out, taps, axis=1, mode="reflect")


def ssim_windowed(pred: ImagePlane, target: ImagePlane, peak: float = 1.0) -> float:
    """Mean structural similarity over sliding 11x11 Gaussian windows
    (sigma 1.5), averaged over the region where the window fits entirely.
    """
    _check_shapes(pred, target, "ssim_windowed")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    radius = SSIM_WINDOW // 2
    h, w = pred.height, pred.width
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionError(
            f"ssim_windowed needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )
    taps = _gaussian_taps(radius, SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    scores = []
    for c in range(pred.channels):
        x = pred.data[:, :, c].astype(np.float64)
        y = target.data[:, :, c].astype(np.float64)
        mx = _local_mean(x, taps)
        my = _local_mean(y, taps)
        vx = _local_mean(x * x, taps) - mx * mx
        vy = _local_mean(y * y, taps) - my * my
        cov = _local_mean(x * y, taps) - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(float(np.mean(s[radius:-radius, radius:-radius])))
    return float(np.mean(scores))


def compute_metrics(pred: ImagePlane, target: ImagePlane, peak: float = 1.0) -> MetricReport:
    """Full report. pred and target share the value scale implied by peak;
    delta_e converts values divided by peak back to unit-range sRGB."""
    if peak == 1.0:
        de_pred, de_target = pred, target
    else:
        de_pred = ImagePlane.from_array(pred.data / peak)
        de_target = ImagePlane.from_array(target.data / peak)
    de_mean, de_p95 = delta_e(de_pred, de_target)
    return MetricReport(
        psnr=psnr(pred, target, peak),
        ssim_global=ssim_global(pred, target, dynamic_range=peak),
        ssim_windowed=ssim_windowed(pred, target, peak),
        delta_e_mean=de_mean,
        delta_e_p95=de_p95,
    )
