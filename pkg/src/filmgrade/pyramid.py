"""Laplacian pyramid decomposition and exact reconstruction.

Bands store per-level high-frequency residuals; folding them back over the
upsampled base rebuilds the input to within float32 rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .image_core import ImagePlane

# Binomial 5-tap kernel taps; /16 normalizes for pyr_down, /8 for pyr_up
# (zero-insertion halves the mean, so the kernel is scaled by 2 per axis).
KERNEL_TAPS = (1, 4, 6, 4, 1)


def _filter_axis(data: np.ndarray, axis: int, norm: float) -> np.ndarray:
    pad = [(0, 0)] * data.ndim
    pad[axis] = (2, 2)
    padded = np.pad(data, pad, mode="reflect")
    n = data.shape[axis]
    sl = [slice(None)] * data.ndim
    acc = np.zeros_like(data)
    for k, w in enumerate(KERNEL_TAPS):
        sl[axis] = slice(k, k + n)
        acc += w * padded[tuple(sl)]
    return acc / norm


def pyr_down(img: ImagePlane) -> ImagePlane:
    """Blur with the separable binomial kernel, then decimate by 2 per axis."""
    if img.height % 2 or img.width % 2:
        raise DimensionError(
            f"pyr_down needs even dimensions, got {img.height}x{img.width}"
        )
    data = img.data.astype(np.float64)
    blurred = _filter_axis(_filter_axis(data, 0, 16.0), 1, 16.0)
    return ImagePlane.from_array(blurred[::2, ::2])


def pyr_up(img: ImagePlane) -> ImagePlane:
    """Zero-insertion upsample by 2, then blur with the kernel scaled by 4."""
    h, w, c = img.data.shape
    up = np.zeros((2 * h, 2 * w, c), dtype=np.float64)
    up[::2, ::2] = img.data
    out = _filter_axis(_filter_axis(up, 0, 8.0), 1, 8.0)
    return ImagePlane.from_array(out)


@dataclass(frozen=True)
class PyramidDecomposition:
    """High-frequency levels (finest first) plus the lowest-frequency base."""

    levels: tuple
    base: ImagePlane

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        planes = list(self.levels) + [self.base]
        for i in range(len(planes) - 1):
            a, b = planes[i], planes[i + 1]
            if a.height != 2 * b.height or a.width != 2 * b.width:
                raise DimensionError(
                    f"level {i} is {a.height}x{a.width}, expected twice "
                    f"{b.height}x{b.width}"
                )
            if a.channels != b.channels:
                raise DimensionError("pyramid planes must share a channel count")

    @property
    def depth(self) -> int:
        return len(self.levels)


def decompose(img: ImagePlane, depth: int = 2) -> PyramidDecomposition:
    """Split an image into `depth` high-frequency levels and a base plane."""
    if depth < 1:
        raise DimensionError(f"depth must be >= 1, got {depth}")
    factor = 1 << depth
    if img.height % factor or img.width % factor:
        raise DimensionError(
            f"{img.height}x{img.width} is not divisible by 2^{depth}; "
            "crop to a multiple first"
        )
    levels = []
    g = img
    for _ in range(depth):
        g_next = pyr_down(g)
        levels.append(ImagePlane.from_array(g.data - pyr_up(g_next).data))
        g = g_next
    return PyramidDecomposition(tuple(levels), g)


def reconstruct(pyr: PyramidDecomposition) -> ImagePlane:
    """Fold the base back up through the levels; inverse of decompose."""
    g = pyr.base
    for level in reversed(pyr.levels):
        g = ImagePlane.from_array(pyr_up(g).data + level.data)
    return g
