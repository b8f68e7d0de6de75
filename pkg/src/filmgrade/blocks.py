"""Forward-only neural operators on numpy arrays.

Covers layer normalization, dense and depthwise convolution, the channel
gate, channel attention, and the three composed nets: the low-frequency
refiner (a small residual UNet), the high-frequency mask net, and the
multi-scale reconstruction module. All parameters come from a
WeightContainer; nothing here trains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChannelError, DimensionError
from .image_core import ImagePlane, resize_bilinear
from .weights import WeightContainer


@dataclass(frozen=True)
class ConvParams:
    """Dense convolution parameters: kernel (out, in, kh, kw), bias (out,)."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = -1  # -1 means kh//2, preserving size at stride 1

    def __post_init__(self):
        k = np.asarray(self.kernel)
        b = np.asarray(self.bias)
        if k.ndim != 4:
            raise DimensionError(f"conv kernel must be 4-d, got shape {k.shape}")
        if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
            raise DimensionError(f"conv kernel sides must be odd, got {k.shape[2:]}")
        if b.shape != (k.shape[0],):
            raise DimensionError(
                f"bias shape {b.shape} does not match {k.shape[0]} output channels"
            )
        if not (np.isfinite(k).all() and np.isfinite(b).all()):
            raise ValueError("conv parameters must be finite")
        if self.stride < 1:
            raise DimensionError(f"stride must be >= 1, got {self.stride}")
        if self.padding == -1:
            object.__setattr__(self, "padding", k.shape[2] // 2)


def conv_from(weights: WeightContainer, prefix: str, stride: int = 1) -> ConvParams:
    return ConvParams(weights.tensor(prefix + ".kernel"), weights.tensor(prefix + ".bias"), stride)


def _pad_reflect(data: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return data
    return np.pad(data, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")


def conv2d(x: ImagePlane, p: ConvParams) -> ImagePlane:
    """Direct cross-correlation with reflect-101 padding.

    Accumulates in float64 over (in-channel, ky, kx) in that order, so the
    result is bit-identical to a naive nested-loop evaluation.
    """
    out_ch, in_ch, kh, kw = p.kernel.shape
    if in_ch != x.channels:
        raise ChannelError(f"conv expects {in_ch} channels, image has {x.channels}")
    data = _pad_reflect(x.data.astype(np.float64), p.padding)
    k = p.kernel.astype(np.float64)
    s = p.stride
    oh = (data.shape[0] - kh) // s + 1
    ow = (data.shape[1] - kw) // s + 1
    out = np.empty((oh, ow, out_ch))
    for co in range(out_ch):
        acc = np.zeros((oh, ow))
        for ci in range(in_ch):
            for ky in range(kh):
                for kx in range(kw):
                    acc += k[co, ci, ky, kx] * data[ky : ky + oh * s : s, kx : kx + ow * s : s, ci]
        out[:, :, co] = acc + float(p.bias[co])
    return ImagePlane.from_array(out)


def conv2d_depthwise(x: ImagePlane, kernel: np.ndarray, bias: np.ndarray) -> ImagePlane:
    """Per-channel convolution; kernel shaped (channels, 1, kh, kw)."""
    c, one, kh, kw = kernel.shape
    if one != 1:
        raise DimensionError(f"depthwise kernel must have inner dim 1, got {kernel.shape}")
    if c != x.channels:
        raise ChannelError(f"depthwise conv expects {c} channels, image has {x.channels}")
    data = _pad_reflect(x.data.astype(np.float64), kh // 2)
    k = kernel.astype(np.float64)
    h, w = x.height, x.width
    out = np.empty((h, w, c))
    for ci in range(c):
        acc = np.zeros((h, w))
        for ky in range(kh):
            for kx in range(kw):
                acc += k[ci, 0, ky, kx] * data[ky : ky + h, kx : kx + w, ci]
        out[:, :, ci] = acc + float(bias[ci])
    return ImagePlane.from_array(out)


def layer_norm(x: ImagePlane, gamma, beta, eps: float = 1e-5) -> ImagePlane:
    """Normalize across channels at each spatial position, then scale/shift."""
    g = np.asarray(gamma, dtype=np.float64).reshape(-1)
    b = np.asarray(beta, dtype=np.float64).reshape(-1)
    if g.size != x.channels or b.size != x.channels:
        raise ChannelError(
            f"gamma/beta lengths ({g.size}, {b.size}) must equal {x.channels} channels"
        )
    d = x.data.astype(np.float64)
    mu = d.mean(axis=2, keepdims=True)
    var = d.var(axis=2, keepdims=True)
    return ImagePlane.from_array((d - mu) / np.sqrt(var + eps) * g + b)


def simple_gate(x: ImagePlane) -> ImagePlane:
    """Split channels in half and multiply the halves elementwise."""
    if x.channels % 2:
        raise ChannelError(f"gate needs an even channel count, got {x.channels}")
    half = x.channels // 2
    d = x.data.astype(np.float64)
    return ImagePlane.from_array(d[:, :, :half] * d[:, :, half:])


def sca(x: ImagePlane, w: ConvParams) -> ImagePlane:
    """Channel attention: global average pool, 1x1 channel map, rescale."""
    out_ch, in_ch, kh, kw = w.kernel.shape
    if (kh, kw) != (1, 1) or in_ch != x.channels or out_ch != x.channels:
        raise ChannelError(
            f"attention map must be 1x1 over {x.channels} channels, got kernel {w.kernel.shape}"
        )
    d = x.data.astype(np.float64)
    pooled = d.mean(axis=(0, 1))
    scale = np.einsum("oc,c->o", w.kernel[:, :, 0, 0].astype(np.float64), pooled)
    scale += w.bias.astype(np.float64)
    return ImagePlane.from_array(d * scale)


def _op_layer_norm(x, weights, op):
    return layer_norm(x, weights.tensor(op.param + ".gamma"), weights.tensor(op.param + ".beta"))


def _op_conv(x, weights, op):
    return conv2d(x, conv_from(weights, op.param))


def _op_conv_dw(x, weights, op):
    return conv2d_depthwise(
        x, weights.tensor(op.param + ".kernel"), weights.tensor(op.param + ".bias")
    )


def _op_simple_gate(x, weights, op):
    return simple_gate(x)


def _op_sca(x, weights, op):
    return sca(x, conv_from(weights, op.param))


# Every operator a block graph may reference. None of these saturate:
# the design keeps sigmoid/softmax-style activations out of the nets.
OPERATOR_REGISTRY = {
    "layer_norm": _op_layer_norm,
    "conv": _op_conv,
    "conv_dw": _op_conv_dw,
    "simple_gate": _op_simple_gate,
    "sca": _op_sca,
}


@dataclass(frozen=True)
class GraphOp:
    kind: str
    param: str
    in_ch: int
    out_ch: int


@dataclass(frozen=True)
class BlockGraph:
    """Linear chain of registry operators with declared channel arity."""

    ops: tuple

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        prev = None
        for op in self.ops:
            if op.kind not in OPERATOR_REGISTRY:
                raise ValueError(f"unknown operator kind '{op.kind}'")
            if prev is not None and op.in_ch != prev.out_ch:
                raise ChannelError(
                    f"operator '{op.kind}' expects {op.in_ch} channels but "
                    f"'{prev.kind}' produces {prev.out_ch}"
                )
            if op.kind == "simple_gate":
                if op.in_ch % 2 or op.out_ch != op.in_ch // 2:
                    raise ChannelError("gate ops need even input and halved output channels")
            prev = op


def run_graph(x: ImagePlane, weights: WeightContainer, graph: BlockGraph) -> ImagePlane:
    if x.channels != graph.ops[0].in_ch:
        raise ChannelError(
            f"graph expects {graph.ops[0].in_ch} input channels, image has {x.channels}"
        )
    for op in graph.ops:
        x = OPERATOR_REGISTRY[op.kind](x, weights, op)
        if x.channels != op.out_ch:
            raise ChannelError(
                f"operator '{op.kind}' produced {x.channels} channels, declared {op.out_ch}"
            )
    return x


def refiner_block_graph(prefix: str, c: int) -> BlockGraph:
    """The core residual block chain: norm, widen, depthwise, gate, attend, mix."""
    return BlockGraph(
        (
            GraphOp("layer_norm", f"{prefix}.ln", c, c),
            GraphOp("conv", f"{prefix}.conv1", c, 2 * c),
            GraphOp("conv_dw", f"{prefix}.dwconv", 2 * c, 2 * c),
            GraphOp("simple_gate", "", 2 * c, c),
            GraphOp("sca", f"{prefix}.sca", c, c),
            GraphOp("conv", f"{prefix}.conv3", c, c),
        )
    )


def _residual_block(x: ImagePlane, weights: WeightContainer, prefix: str) -> ImagePlane:
    y = run_graph(x, weights, refiner_block_graph(prefix, x.channels))
    return ImagePlane.from_array(x.data + y.data)


def nsr_forward(low_freq: ImagePlane, weights: WeightContainer, arch=None) -> ImagePlane:
    """Low-frequency refiner: residual UNet with one downsample stage.

    `arch` optionally maps stage names ("enc0", "enc1", "dec1", "dec0") to
    replacement BlockGraphs; by default each stage runs the standard block.
    """
    if low_freq.channels != 3:
        raise ChannelError(f"refiner input must have 3 channels, got {low_freq.channels}")

    def stage(x, name):
        if arch and name in arch:
            y = run_graph(x, weights, arch[name])
            return ImagePlane.from_array(x.data + y.data)
        return _residual_block(x, weights, f"nsr.{name}")

    f0 = conv2d(low_freq, conv_from(weights, "nsr.intro"))
    e0 = stage(f0, "enc0")
    dn = conv2d(e0, conv_from(weights, "nsr.down0", stride=2))
    e1 = stage(dn, "enc1")
    d1 = stage(e1, "dec1")
    up = conv2d(resize_bilinear(d1, e0.height, e0.width), conv_from(weights, "nsr.up1"))
    d0 = stage(ImagePlane.from_array(up.data + e0.data), "dec0")
    residual = conv2d(d0, conv_from(weights, "nsr.outro"))
    return ImagePlane.from_array(low_freq.data + residual.data)


def mask_net_forward(
    prev_hf: ImagePlane,
    up_low: ImagePlane,
    up_refined: ImagePlane,
    weights: WeightContainer,
) -> ImagePlane:
    """Predict a single-channel mask from the 9-channel stacked context."""
    for name, img in (("prev_hf", prev_hf), ("up_low", up_low), ("up_refined", up_refined)):
        if (img.height, img.width) != (prev_hf.height, prev_hf.width):
            raise DimensionError(
                f"mask input '{name}' is {img.height}x{img.width}, "
                f"expected {prev_hf.height}x{prev_hf.width}"
            )
        if img.channels != 3:
            raise ChannelError(f"mask input '{name}' must have 3 channels, got {img.channels}")
    cat = ImagePlane.from_array(
        np.concatenate([prev_hf.data, up_low.data, up_refined.data], axis=2)
    )
    h = simple_gate(conv2d(cat, conv_from(weights, "mask.conv1")))
    h = simple_gate(conv2d(h, conv_from(weights, "mask.conv2")))
    return conv2d(h, conv_from(weights, "mask.conv3"))


def apply_mask(hf: ImagePlane, mask: ImagePlane) -> ImagePlane:
    """Pixel-wise product; a 1-channel mask broadcasts across band channels."""
    if (hf.height, hf.width) != (mask.height, mask.width):
        raise DimensionError(
            f"mask {mask.height}x{mask.width} does not match band {hf.height}x{hf.width}"
        )
    if mask.channels not in (1, hf.channels):
        raise ChannelError(
            f"mask has {mask.channels} channels; expected 1 or {hf.channels}"
        )
    return ImagePlane.from_array(hf.data.astype(np.float64) * mask.data)


def _avg_pool(data: np.ndarray, r: int) -> np.ndarray:
    """Non-overlapping r x r mean pooling; edge windows average fewer samples."""
    h, w = data.shape[:2]
    ih = np.arange(0, h, r)
    iw = np.arange(0, w, r)
    sums = np.add.reduceat(np.add.reduceat(data, ih, axis=0), iw, axis=1)
    ch = np.minimum(ih + r, h) - ih
    cw = np.minimum(iw + r, w) - iw
    return sums / (ch[:, None, None] * cw[None, :, None])


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def msrm_forward(x: ImagePlane, weights: WeightContainer) -> ImagePlane:
    """Two-branch conv + channel reweighting + pooled-context fusion.

    The gate inside the channel-reweighting step is the one sigmoid in this
    module; it never feeds the main signal path directly.
    """
    dw = conv2d_depthwise(
        x, weights.tensor("msrm.branch_a_dw.kernel"), weights.tensor("msrm.branch_a_dw.bias")
    )
    a = conv2d(dw, conv_from(weights, "msrm.branch_a_pw"))
    b = conv2d(x, conv_from(weights, "msrm.branch_b"))
    y = x.data.astype(np.float64) + a.data + b.data

    pooled = y.mean(axis=(0, 1))
    k1 = weights.tensor("msrm.se1.kernel")
    k2 = weights.tensor("msrm.se2.kernel")
    hidden = np.einsum("oc,c->o", k1[:, :, 0, 0].astype(np.float64), pooled)
    hidden += weights.tensor("msrm.se1.bias").astype(np.float64)
    logits = np.einsum("oc,c->o", k2[:, :, 0, 0].astype(np.float64), hidden)
    logits += weights.tensor("msrm.se2.bias").astype(np.float64)
    y_se = ImagePlane.from_array(y * _sigmoid(logits))

    z = conv2d(y_se, conv_from(weights, "msrm.compress"))
    parts = [z.data.astype(np.float64)]
    for r in (2, 4, 8):
        pooled_map = _avg_pool(z.data.astype(np.float64), r)
        parts.append(
            resize_bilinear(ImagePlane.from_array(pooled_map), z.height, z.width).data.astype(
                np.float64
            )
        )
    cat = ImagePlane.from_array(np.concatenate(parts, axis=2))
    fused = conv2d(cat, conv_from(weights, "msrm.fuse"))
    return ImagePlane.from_array(y_se.data + fused.data)


def _conv_specs(prefix, out_c, in_c, k):
    return [
        (f"{prefix}.kernel", (out_c, in_c, k, k), "uniform", in_c * k * k),
        (f"{prefix}.bias", (out_c,), "zeros", 1),
    ]


def _block_specs(prefix, c):
    specs = [
        (f"{prefix}.ln.gamma", (c,), "ones", 1),
        (f"{prefix}.ln.beta", (c,), "zeros", 1),
    ]
    specs += _conv_specs(f"{prefix}.conv1", 2 * c, c, 1)
    specs += [
        (f"{prefix}.dwconv.kernel", (2 * c, 1, 3, 3), "uniform", 9),
        (f"{prefix}.dwconv.bias", (2 * c,), "zeros", 1),
    ]
    specs += _conv_specs(f"{prefix}.sca", c, c, 1)
    specs += _conv_specs(f"{prefix}.conv3", c, c, 1)
    return specs


def nsr_tensor_specs(width: int = 16):
    w = width
    specs = _conv_specs("nsr.intro", w, 3, 3)
    specs += _block_specs("nsr.enc0", w)
    specs += _conv_specs("nsr.down0", 2 * w, w, 3)
    specs += _block_specs("nsr.enc1", 2 * w)
    specs += _block_specs("nsr.dec1", 2 * w)
    specs += _conv_specs("nsr.up1", w, 2 * w, 1)
    specs += _block_specs("nsr.dec0", w)
    specs += _conv_specs("nsr.outro", 3, w, 3)
    return specs


def mask_tensor_specs():
    specs = _conv_specs("mask.conv1", 32, 9, 3)
    specs += _conv_specs("mask.conv2", 32, 16, 3)
    specs += _conv_specs("mask.conv3", 1, 16, 3)
    return specs


def msrm_tensor_specs(channels: int = 3):
    c = channels
    cr = max(1, c // 4)
    specs = [
        ("msrm.branch_a_dw.kernel", (c, 1, 3, 3), "uniform", 9),
        ("msrm.branch_a_dw.bias", (c,), "zeros", 1),
    ]
    specs += _conv_specs("msrm.branch_a_pw", c, c, 1)
    specs += _conv_specs("msrm.branch_b", c, c, 3)
    specs += _conv_specs("msrm.se1", cr, c, 1)
    specs += _conv_specs("msrm.se2", c, cr, 1)
    specs += _conv_specs("msrm.compress", c, c, 3)
    specs += _conv_specs("msrm.fuse", c, 4 * c, 1)
    return specs
