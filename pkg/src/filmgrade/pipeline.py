"""End-to-end stylization: pyramid split, low-frequency refinement, mask-gated
detail bands, reconstruction, and a final adaptive LUT grade. Also owns the
weight-container lifecycle (init / validate / load / save).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (
    apply_mask,
    mask_net_forward,
    mask_tensor_specs,
    msrm_forward,
    msrm_tensor_specs,
    nsr_forward,
    nsr_tensor_specs,
)
from .errors import ChannelError, DimensionError, WeightFormatError
from .image_core import ImagePlane, resize_bilinear
from .lut import AdjusterWeights, Lut3D, adjuster_tensor_specs, identity_lut, ttr_apply
from .pyramid import PyramidDecomposition, decompose, pyr_up, reconstruct
from .weights import WeightContainer, load_weights, materialize_specs, save_weights

__all__ = [
    "FilmPipelineConfig",
    "init_weights",
    "identity_weights",
    "load_weights",
    "required_tensor_specs",
    "save_weights",
    "stylize",
    "validate_weights",
]

DEFAULT_NSR_WIDTH = 16
ADJUSTER_LR_SIZE = 64


@dataclass(frozen=True)
class FilmPipelineConfig:
    depth: int = 2
    nsr_input_size: int = 128
    lut_bins: int = 33
    basis_count: int = 3
    weights_path: str = ""

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        # the refiner has one stride-2 encoder stage
        if self.nsr_input_size < 2 or self.nsr_input_size % 2:
            raise ValueError(
                f"nsr_input_size must be an even count >= 2, got {self.nsr_input_size}"
            )
        if self.lut_bins < 2:
            raise ValueError(f"lut_bins must be >= 2, got {self.lut_bins}")
        if self.basis_count < 1:
            raise ValueError(f"basis_count must be >= 1, got {self.basis_count}")


def required_tensor_specs(cfg: FilmPipelineConfig, nsr_width: int = DEFAULT_NSR_WIDTH):
    """Every named tensor stylize will ask for, with shape / init kind / fan-in."""
    return (
        nsr_tensor_specs(nsr_width)
        + mask_tensor_specs()
        + msrm_tensor_specs(3)
        + adjuster_tensor_specs(cfg.basis_count)
    )


def _basis_shape(cfg: FilmPipelineConfig):
    return (cfg.lut_bins, cfg.lut_bins, cfg.lut_bins, 3)


def validate_weights(cfg: FilmPipelineConfig, weights: WeightContainer) -> int:
    """Check header consistency and tensor presence/shapes; returns the
    refiner width declared by the container."""
    header = weights.header
    if not header:
        raise WeightFormatError("weight container carries no architecture header")
    for key in ("depth", "nsr_input_size", "lut_bins", "basis_count"):
        want = getattr(cfg, key)
        got = header.get(key)
        if got != want:
            raise WeightFormatError(
                f"container header {key}={got} does not match configured {key}={want}"
            )
    width = int(header.get("nsr_width", DEFAULT_NSR_WIDTH))
    for name, shape, _, _ in required_tensor_specs(cfg, width):
        tensor = weights.tensor(name)
        if tensor.shape != shape:
            raise WeightFormatError(
                f"tensor '{name}' has shape {tensor.shape}, expected {shape}"
            )
    for k in range(cfg.basis_count):
        name = f"lut.basis{k}"
        tensor = weights.tensor(name)
        if tensor.shape != _basis_shape(cfg):
            raise WeightFormatError(
                f"tensor '{name}' has shape {tensor.shape}, expected {_basis_shape(cfg)}"
            )
    return width


def _arch_header(cfg: FilmPipelineConfig, nsr_width: int) -> dict:
    return {
        "depth": cfg.depth,
        "nsr_input_size": cfg.nsr_input_size,
        "lut_bins": cfg.lut_bins,
        "basis_count": cfg.basis_count,
        "nsr_width": nsr_width,
    }


def init_weights(
    cfg: FilmPipelineConfig, seed: int, nsr_width: int = DEFAULT_NSR_WIDTH
) -> WeightContainer:
    """Seeded initialization of every tensor. The grading stage starts
    neutral: identity basis lattices, zero adjuster head with bias
    (1, 0, ..., 0) so basis 0 gets unit weight."""
    tensors = materialize_specs(required_tensor_specs(cfg, nsr_width), seed)
    head_bias = np.zeros(cfg.basis_count, dtype=np.float32)
    head_bias[0] = 1.0
    tensors["adj.head.bias"] = head_bias
    ident = identity_lut(cfg.lut_bins).lattice.astype(np.float32)
    for k in range(cfg.basis_count):
        tensors[f"lut.basis{k}"] = ident
    return WeightContainer(tensors, _arch_header(cfg, nsr_width))


def identity_weights(
    cfg: FilmPipelineConfig, nsr_width: int = DEFAULT_NSR_WIDTH
) -> WeightContainer:
    """A container under which stylize reproduces its input.

    Zeroed convolutions make the refiner a pure skip; the mask head bias
    pins every mask to 1; a large gate bias opens the reconstruction
    module's channel gate so its zero branches vanish; the grade blends
    only the identity basis lattice.
    """
    tensors = {
        name: np.zeros(shape, dtype=np.float32)
        for name, shape, _, _ in required_tensor_specs(cfg, nsr_width)
    }
    tensors["mask.conv3.bias"] = np.ones(1, dtype=np.float32)
    tensors["msrm.se2.bias"] = np.full(3, 40.0, dtype=np.float32)
    head_bias = np.zeros(cfg.basis_count, dtype=np.float32)
    head_bias[0] = 1.0
    tensors["adj.head.bias"] = head_bias
    ident = identity_lut(cfg.lut_bins).lattice.astype(np.float32)
    for k in range(cfg.basis_count):
        tensors[f"lut.basis{k}"] = ident
    return WeightContainer(tensors, _arch_header(cfg, nsr_width))


def _refine_base(
    base: ImagePlane, size: int, weights: WeightContainer
) -> ImagePlane:
    """Run the low-frequency refiner, bounding its cost on large bases.

    Bases no larger than `size` run at native resolution. Larger bases are
    downsampled to size x size and only the predicted correction is
    transported back, so a zero correction leaves the base untouched at
    any resolution.
    """
    if base.height <= size and base.width <= size:
        return nsr_forward(base, weights)
    small = resize_bilinear(base, size, size)
    residual = nsr_forward(small, weights).data.astype(np.float64) - small.data
    grown = resize_bilinear(
        ImagePlane.from_array(residual), base.height, base.width
    )
    return ImagePlane.from_array(base.data + grown.data)


def stylize(
    img: ImagePlane, cfg: FilmPipelineConfig, weights: WeightContainer
) -> ImagePlane:
    """Full forward pass; output has the input's shape, clamped to [0,1]."""
    validate_weights(cfg, weights)
    if img.channels != 3:
        raise ChannelError(f"stylize needs a 3-channel image, got {img.channels}")
    factor = 1 << cfg.depth
    if img.height % factor or img.width % factor:
        raise DimensionError(
            f"image {img.height}x{img.width} not divisible by 2^depth = {factor}"
        )

    pyr = decompose(img, cfg.depth)
    refined_base = _refine_base(pyr.base, cfg.nsr_input_size, weights)

    levels = list(pyr.levels)
    coarsest = levels[-1]
    mask = mask_net_forward(coarsest, pyr_up(pyr.base), pyr_up(refined_base), weights)
    refined_levels = [None] * len(levels)
    refined_levels[-1] = msrm_forward(apply_mask(coarsest, mask), weights)
    for i in range(len(levels) - 2, -1, -1):
        mask = resize_bilinear(mask, levels[i].height, levels[i].width)
        refined_levels[i] = apply_mask(levels[i], mask)

    recombined = reconstruct(PyramidDecomposition(tuple(refined_levels), refined_base))
    basis = [
        Lut3D(cfg.lut_bins, weights.tensor(f"lut.basis{k}").astype(np.float64))
        for k in range(cfg.basis_count)
    ]
    return ttr_apply(recombined, basis, AdjusterWeights(weights), lr_size=ADJUSTER_LR_SIZE)
