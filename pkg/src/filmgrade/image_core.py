"""Raster data model, PNG I/O, bilinear resampling, and sRGB/CIELAB conversion."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ChannelError, DimensionError, PngFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# sRGB linear RGB -> XYZ, D65 white point, 2 degree observer.
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
# D65 reference white (matches the matrix row sums).
WHITE_XYZ = np.array([0.95047, 1.0, 1.08883])


class AlphaStrippedWarning(UserWarning):
    """Emitted when a PNG alpha channel is discarded on load."""


@dataclass(frozen=True)
class ImagePlane:
    """H x W x C float32 raster.

    Color images hold samples in [0, 1]; feature maps may be unbounded.
    The backing array is C-contiguous and marked read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DimensionError(f"ImagePlane needs a (H, W, C) array, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImagePlane":
        """Wrap an array, copying to float32. 2-d input becomes single-channel."""
        a = np.asarray(arr)
        if a.ndim == 2:
            a = a[:, :, None]
        a = np.ascontiguousarray(a, dtype=np.float32)
        a.setflags(write=False)
        return cls(a)


@dataclass(frozen=True)
class LabColor:
    """CIELAB coordinates: L in [0, 100], a green-red, b blue-yellow."""

    L: float
    a: float
    b: float


def _require_color(img: ImagePlane, op: str) -> None:
    if img.channels not in (1, 3):
        raise ChannelError(f"{op} requires 1 or 3 channels, got {img.channels}")


def _parse_ihdr(data: bytes):
    if len(data) < 33 or data[:8] != PNG_SIGNATURE:
        raise PngFormatError("not a PNG file (bad signature)")
    length, ctype_tag = struct.unpack(">I4s", data[8:16])
    if ctype_tag != b"IHDR" or length != 13:
        raise PngFormatError("malformed PNG: IHDR chunk missing or wrong size")
    width, height, depth, color_type, _comp, _filt, interlace = struct.unpack(
        ">IIBBBBB", data[16:29]
    )
    return width, height, depth, color_type, interlace


def load_png(path) -> ImagePlane:
    """Load an 8- or 16-bit grayscale/RGB PNG, scaled to [0, 1].

    Alpha channels are stripped with an AlphaStrippedWarning. Palette and
    interlaced PNGs raise PngFormatError.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    _w, _h, depth, color_type, interlace = _parse_ihdr(raw)
    if interlace != 0:
        raise PngFormatError(f"{path}: interlaced (Adam7) PNG is not supported")
    if color_type == 3:
        raise PngFormatError(f"{path}: palette PNG is not supported; expand to RGB first")
    if color_type not in (0, 2, 4, 6):
        raise PngFormatError(f"{path}: unsupported PNG color type {color_type}")
    if depth not in (8, 16):
        raise PngFormatError(f"{path}: unsupported PNG bit depth {depth}")

    arr = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise PngFormatError(f"{path}: PNG decode failed")

    if color_type in (4, 6):
        warnings.warn(f"{path}: alpha channel stripped", AlphaStrippedWarning, stacklevel=2)
    if color_type == 4:
        # cv2 expands gray+alpha to BGRA with replicated gray.
        arr = arr[:, :, 0]
    elif arr.ndim == 3:
        arr = arr[:, :, 2::-1]  # BGR(A) -> RGB, alpha dropped

    scale = np.float32((1 << depth) - 1)
    return ImagePlane.from_array(arr.astype(np.float32) / scale)


def save_png(img: ImagePlane, path, bitdepth: int = 16) -> None:
    """Write a PNG, clamping to [0, 1] and quantizing with round-half-up."""
    _require_color(img, "save_png")
    if bitdepth not in (8, 16):
        raise PngFormatError(f"bitdepth must be 8 or 16, got {bitdepth}")
    scale = float((1 << bitdepth) - 1)
    q = np.floor(np.clip(img.data, 0.0, 1.0).astype(np.float64) * scale + 0.5)
    q = q.astype(np.uint8 if bitdepth == 8 else np.uint16)
    if img.channels == 3:
        q = q[:, :, ::-1]  # RGB -> BGR for the encoder
    else:
        q = q[:, :, 0]
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write PNG to {path}")


def _axis_coords(n_in: int, n_out: int):
    # Half-pixel-center mapping, clamped at the edges.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize_bilinear(img: ImagePlane, out_h: int, out_w: int) -> ImagePlane:
    """Separable bilinear resize with half-pixel centers and clamped edges."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"target size must be positive, got {out_h}x{out_w}")
    if out_h == img.height and out_w == img.width:
        return img
    data = img.data.astype(np.float64)
    y0, y1, fy = _axis_coords(img.height, out_h)
    x0, x1, fx = _axis_coords(img.width, out_w)
    rows = data[y0] * (1.0 - fy)[:, None, None] + data[y1] * fy[:, None, None]
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    return ImagePlane.from_array(out)


def _srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta, t**3, 3.0 * delta**2 * (t - 4.0 / 29.0))


def srgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) sRGB array in [0, 1] to CIELAB (D65)."""
    v = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    xyz = _srgb_to_linear(v) @ RGB_TO_XYZ.T
    f = _lab_f(xyz / WHITE_XYZ)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_array_to_srgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of srgb_array_to_lab; output clipped to [0, 1]."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-1)) * WHITE_XYZ
    return np.clip(_linear_to_srgb(xyz @ XYZ_TO_RGB.T), 0.0, 1.0)


def srgb_to_lab(rgb) -> LabColor:
    """Convert one sRGB triple in [0, 1] to a LabColor."""
    vec = np.asarray(rgb, dtype=np.float64).reshape(3)
    lab = srgb_array_to_lab(vec)
    return LabColor(float(lab[0]), float(lab[1]), float(lab[2]))


def lab_to_srgb(lab) -> np.ndarray:
    """Convert a LabColor (or 3-sequence) back to an sRGB triple in [0, 1]."""
    if isinstance(lab, LabColor):
        vec = np.array([lab.L, lab.a, lab.b], dtype=np.float64)
    else:
        vec = np.asarray(lab, dtype=np.float64).reshape(3)
    return lab_array_to_srgb(vec)
