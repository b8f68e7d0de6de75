"""3D lookup-table color grading: lattice type, trilinear application,
basis blending, the image-adaptive weight predictor, and .cube file I/O.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ChannelError, CubeFormatError, DimensionError
from .image_core import ImagePlane, resize_bilinear
from .weights import WeightContainer


@dataclass(frozen=True)
class Lut3D:
    """Cubic lattice mapping RGB to RGB.

    lattice is (bins, bins, bins, 3), indexed (r_bin, g_bin, b_bin) with r
    slowest. Entries may leave [0, 1] during fitting; only the final image
    application clamps.
    """

    bins: int
    lattice: np.ndarray

    def __post_init__(self):
        if self.bins < 2:
            raise DimensionError(f"a 3D LUT needs at least 2 bins per axis, got {self.bins}")
        lat = np.ascontiguousarray(self.lattice, dtype=np.float64)
        if lat.shape != (self.bins, self.bins, self.bins, 3):
            raise DimensionError(
                f"lattice shape {lat.shape} does not match bins {self.bins}"
            )
        if not np.isfinite(lat).all():
            raise ValueError("LUT lattice entries must be finite")
        lat.setflags(write=False)
        object.__setattr__(self, "lattice", lat)

    @classmethod
    def from_lattice(cls, lattice) -> "Lut3D":
        lattice = np.asarray(lattice)
        return cls(lattice.shape[0], lattice)


def identity_lut(bins: int = 33) -> Lut3D:
    """Lattice whose entry (i, j, k) is (i, j, k)/(bins-1)."""
    if bins < 2:
        raise DimensionError(f"a 3D LUT needs at least 2 bins per axis, got {bins}")
    g = np.arange(bins, dtype=np.float64) / (bins - 1)
    lattice = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    return Lut3D(bins, lattice)


def lattice_coords(values: np.ndarray, bins: int):
    """Continuous lattice coordinates: floor index (clamped to bins-2) and fraction."""
    c = np.clip(values, 0.0, 1.0) * (bins - 1)
    idx = np.minimum(np.floor(c), bins - 2).astype(np.intp)
    return idx, c - idx


def apply_lut(lut: Lut3D, img: ImagePlane) -> ImagePlane:
    """Trilinear 8-corner blend per pixel.

    Corners accumulate in (dr, dg, db) lexicographic order with weights
    composed as ((wr*wg)*wb), so the result is bit-identical to a naive
    per-pixel loop with the same ordering.
    """
    if img.channels != 3:
        raise ChannelError(f"LUT application needs a 3-channel image, got {img.channels}")
    lat = lut.lattice
    idx, f = lattice_coords(img.data.astype(np.float64), lut.bins)
    ir, ig, ib = idx[..., 0], idx[..., 1], idx[..., 2]
    fr, fg, fb = f[..., 0], f[..., 1], f[..., 2]
    acc = np.zeros(img.data.shape, dtype=np.float64)
    for dr in (0, 1):
        wr = fr if dr else 1.0 - fr
        for dg in (0, 1):
            wrg = wr * (fg if dg else 1.0 - fg)
            for db in (0, 1):
                w = wrg * (fb if db else 1.0 - fb)
                acc += w[..., None] * lat[ir + dr, ig + dg, ib + db]
    return ImagePlane.from_array(acc)


def combine_luts(basis, weights) -> Lut3D:
    """Entrywise weighted sum of same-size LUTs."""
    basis = list(basis)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not basis:
        raise ValueError("combine_luts needs at least one basis LUT")
    if len(basis) != w.size:
        raise ValueError(f"{len(basis)} basis LUTs but {w.size} weights")
    bins = basis[0].bins
    for lut in basis[1:]:
        if lut.bins != bins:
            raise DimensionError(f"basis bin counts differ: {lut.bins} vs {bins}")
    acc = np.zeros_like(basis[0].lattice)
    for wk, lut in zip(w, basis):
        acc += wk * lut.lattice
    return Lut3D(bins, acc)


@dataclass(frozen=True)
class AdjusterWeights:
    """Parameters of the small CNN that predicts per-basis blend weights."""

    container: WeightContainer
    prefix: str = "adj"

    @property
    def basis_count(self) -> int:
        return int(self.container.tensor(f"{self.prefix}.head.bias").size)


def adjuster_forward(lr_img: ImagePlane, w: AdjusterWeights) -> np.ndarray:
    """Predict blend weights from a low-resolution view of the image.

    Four stride-2 convolutions with channel gates, global average pool,
    affine head. Output is unbounded; no softmax.
    """
    from .blocks import conv_from, conv2d, simple_gate

    if lr_img.channels != 3:
        raise ChannelError(f"adjuster input must have 3 channels, got {lr_img.channels}")
    x = lr_img
    for i in range(4):
        x = simple_gate(conv2d(x, conv_from(w.container, f"{w.prefix}.conv{i}", stride=2)))
    pooled = x.data.astype(np.float64).mean(axis=(0, 1))
    head_k = w.container.tensor(f"{w.prefix}.head.kernel").astype(np.float64)
    head_b = w.container.tensor(f"{w.prefix}.head.bias").astype(np.float64)
    return head_k @ pooled + head_b


def adjuster_tensor_specs(basis_count: int = 3):
    specs = [
        ("adj.conv0.kernel", (16, 3, 3, 3), "uniform", 27),
        ("adj.conv0.bias", (16,), "zeros", 1),
        ("adj.conv1.kernel", (32, 8, 3, 3), "uniform", 72),
        ("adj.conv1.bias", (32,), "zeros", 1),
        ("adj.conv2.kernel", (64, 16, 3, 3), "uniform", 144),
        ("adj.conv2.bias", (64,), "zeros", 1),
        ("adj.conv3.kernel", (128, 32, 3, 3), "uniform", 288),
        ("adj.conv3.bias", (128,), "zeros", 1),
        ("adj.head.kernel", (basis_count, 64), "zeros", 64),
        ("adj.head.bias", (basis_count,), "zeros", 1),
    ]
    return specs


def ttr_apply(hr_img: ImagePlane, basis, adj: AdjusterWeights, lr_size: int = 64) -> ImagePlane:
    """Blend basis LUTs with image-adaptive weights and grade the image."""
    weights = adjuster_forward(resize_bilinear(hr_img, lr_size, lr_size), adj)
    basis = list(basis)
    if len(basis) != weights.size:
        raise ValueError(f"adjuster emits {weights.size} weights for {len(basis)} basis LUTs")
    graded = apply_lut(combine_luts(basis, weights), hr_img)
    return ImagePlane.from_array(np.clip(graded.data, 0.0, 1.0))


_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def read_cube(path) -> Lut3D:
    """Parse a .cube text file (3D only, unit domain).

    Tolerates CRLF endings, blank lines, and '#' comments. Data rows hold
    three floats with the red index varying fastest.
    """
    size = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            key = tokens[0]
            if key == "LUT_3D_SIZE":
                if len(tokens) != 2 or not tokens[1].isdigit():
                    raise CubeFormatError(f"{path}:{lineno}: malformed LUT_3D_SIZE line")
                size = int(tokens[1])
                if size < 2:
                    raise CubeFormatError(f"{path}:{lineno}: LUT size must be >= 2, got {size}")
            elif key == "TITLE":
                continue
            elif key in ("DOMAIN_MIN", "DOMAIN_MAX"):
                want = 0.0 if key == "DOMAIN_MIN" else 1.0
                vals = tokens[1:]
                if len(vals) != 3 or any(float(v) != want for v in vals):
                    raise CubeFormatError(
                        f"{path}:{lineno}: only the unit domain is supported"
                    )
            elif key == "LUT_1D_SIZE":
                raise CubeFormatError(f"{path}:{lineno}: 1D LUTs are not supported")
            elif _FLOAT.match(key):
                if len(tokens) != 3 or not all(_FLOAT.match(t) for t in tokens):
                    raise CubeFormatError(
                        f"{path}:{lineno}: expected three floats, got {line!r}"
                    )
                rows.append([float(t) for t in tokens])
            else:
                raise CubeFormatError(f"{path}:{lineno}: unrecognized keyword {key!r}")
    if size is None:
        raise CubeFormatError(f"{path}: missing LUT_3D_SIZE")
    if len(rows) != size**3:
        raise CubeFormatError(
            f"{path}: expected {size**3} data rows for size {size}, found {len(rows)}"
        )
    # File order is r fastest; the lattice indexes r slowest.
    arr = np.array(rows, dtype=np.float64).reshape(size, size, size, 3)
    return Lut3D(size, np.transpose(arr, (2, 1, 0, 3)))


def write_cube(lut: Lut3D, path, title: str = None) -> None:
    """Write a .cube file with 6-decimal entries, red index fastest."""
    lines = []
    if title:
        lines.append(f'TITLE "{title}"')
    lines.append(f"LUT_3D_SIZE {lut.bins}")
    flat = np.transpose(lut.lattice, (2, 1, 0, 3)).reshape(-1, 3)
    for r, g, b in flat:
        lines.append(f"{r:.6f} {g:.6f} {b:.6f}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
