from pathlib import Path

import numpy as np
import pytest

from filmgrade import ChannelError, DimensionError, ImagePlane, WeightFormatError
from filmgrade.blocks import (
    OPERATOR_REGISTRY,
    BlockGraph,
    ConvParams,
    GraphOp,
    _avg_pool,
    apply_mask,
    conv2d,
    conv2d_depthwise,
    layer_norm,
    mask_net_forward,
    mask_tensor_specs,
    msrm_forward,
    msrm_tensor_specs,
    nsr_forward,
    nsr_tensor_specs,
    simple_gate,
    sca,
)
from filmgrade.weights import WeightContainer, materialize_specs

from conftest import check_golden

def _reflect(i: int, n: int) -> int:
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def _conv_ref(data, kernel, bias, stride=1, pad=None):
    """Nested-loop convolution oracle with reflect-101 indexing."""
    out_ch, in_ch, kh, kw = kernel.shape
    if pad is None:
        pad = kh // 2
    h, w = data.shape[:2]
    idx_y = [_reflect(i, h) for i in range(-pad, h + pad)]
    idx_x = [_reflect(i, w) for i in range(-pad, w + pad)]
    padded = data.astype(np.float64)[np.ix_(idx_y, idx_x)]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((oh, ow, out_ch))
    k = kernel.astype(np.float64)
    for oy in range(oh):
        for ox in range(ow):
            for co in range(out_ch):
                acc = 0.0
                for ci in range(in_ch):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += k[co, ci, ky, kx] * padded[oy * stride + ky, ox * stride + kx, ci]
                out[oy, ox, co] = acc + float(bias[co])
    return out


def _zero_container(specs) -> WeightContainer:
    return WeightContainer({name: np.zeros(shape, np.float32) for name, shape, _, _ in specs}, {})


def test_layer_norm_constant_channels_zero():
    x = ImagePlane.from_array(np.full((3, 3, 4), 0.7))
    out = layer_norm(x, np.ones(4), np.zeros(4))
    assert np.max(np.abs(out.data)) < 1e-6


def test_layer_norm_zero_gamma_is_beta():
    rng = np.random.default_rng(31)
    x = ImagePlane.from_array(rng.random((4, 4, 3)))
    out = layer_norm(x, np.zeros(3), np.full(3, 0.25))
    assert np.allclose(out.data, 0.25)


def test_layer_norm_two_channel_hand_case():
    x = ImagePlane.from_array(np.array([[[1.0, 3.0]]]))
    out = layer_norm(x, np.ones(2), np.zeros(2), eps=1e-5)
    assert np.allclose(out.data[0, 0], [-1.0, 1.0], atol=1e-4)


def test_layer_norm_statistics_law():
    rng = np.random.default_rng(32)
    x = ImagePlane.from_array(rng.random((4, 5, 8)))
    out = layer_norm(x, np.ones(8), np.zeros(8), eps=1e-5).data.astype(np.float64)
    mu = out.mean(axis=2)
    var = out.var(axis=2)
    assert np.max(np.abs(mu)) < 1e-5
    assert np.max(np.abs(var - 1.0)) < 1e-3


def test_layer_norm_length_mismatch():
    x = ImagePlane.from_array(np.zeros((2, 2, 3)))
    with pytest.raises(ChannelError):
        layer_norm(x, np.ones(4), np.zeros(3))


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(33)
    x = ImagePlane.from_array(rng.random((5, 6, 3), dtype=np.float32))
    k = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    out = conv2d(x, ConvParams(k, np.zeros(3, np.float32)))
    assert np.array_equal(out.data, x.data)


def test_conv2d_zero_kernel_gives_bias():
    x = ImagePlane.from_array(np.ones((4, 4, 2)))
    out = conv2d(x, ConvParams(np.zeros((3, 2, 3, 3), np.float32), np.array([1.5, -2.0, 0.0], np.float32)))
    assert out.data.shape == (4, 4, 3)
    assert np.allclose(out.data[:, :, 0], 1.5)
    assert np.allclose(out.data[:, :, 1], -2.0)


def test_conv2d_average_kernel_matches_oracle():
    rng = np.random.default_rng(34)
    data = rng.random((4, 4, 1)).astype(np.float32)
    k = np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=np.float32)
    bias = np.zeros(1, np.float32)
    out = conv2d(ImagePlane.from_array(data), ConvParams(k, bias))
    assert np.array_equal(out.data, _conv_ref(data, k, bias).astype(np.float32))


def test_conv2d_matches_oracle_exactly():
    rng = np.random.default_rng(35)
    data = rng.standard_normal((8, 8, 3)).astype(np.float32)
    k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    bias = rng.standard_normal(4).astype(np.float32)
    out = conv2d(ImagePlane.from_array(data), ConvParams(k, bias))
    assert np.array_equal(out.data, _conv_ref(data, k, bias).astype(np.float32))


def test_conv2d_stride2_matches_oracle():
    rng = np.random.default_rng(36)
    data = rng.standard_normal((8, 6, 2)).astype(np.float32)
    k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    bias = rng.standard_normal(3).astype(np.float32)
    out = conv2d(ImagePlane.from_array(data), ConvParams(k, bias, stride=2))
    ref = _conv_ref(data, k, bias, stride=2)
    assert out.data.shape == ref.shape
    assert np.array_equal(out.data, ref.astype(np.float32))


def test_conv2d_channel_mismatch():
    x = ImagePlane.from_array(np.zeros((4, 4, 2)))
    with pytest.raises(ChannelError):
        conv2d(x, ConvParams(np.zeros((1, 3, 1, 1), np.float32), np.zeros(1, np.float32)))


def test_conv_params_validation():
    with pytest.raises(DimensionError):
        ConvParams(np.zeros((1, 1, 2, 2), np.float32), np.zeros(1, np.float32))
    bad = np.zeros((1, 1, 1, 1), np.float32)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ConvParams(bad, np.zeros(1, np.float32))


def test_depthwise_matches_dense_blockdiag():
    rng = np.random.default_rng(37)
    data = rng.standard_normal((6, 5, 3)).astype(np.float32)
    kd = rng.standard_normal((3, 1, 3, 3)).astype(np.float32)
    bias = rng.standard_normal(3).astype(np.float32)
    dense = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        dense[c, c] = kd[c, 0]
    out = conv2d_depthwise(ImagePlane.from_array(data), kd, bias)
    ref = _conv_ref(data, dense, bias)
    assert np.allclose(out.data, ref.astype(np.float32), atol=1e-7)


def test_simple_gate_laws():
    rng = np.random.default_rng(38)
    y = rng.random((3, 3, 2)).astype(np.float32)
    ones_first = np.concatenate([np.ones((3, 3, 2), np.float32), y], axis=2)
    assert np.array_equal(simple_gate(ImagePlane.from_array(ones_first)).data, y)
    zeros_first = np.concatenate([np.zeros((3, 3, 2), np.float32), y], axis=2)
    assert not simple_gate(ImagePlane.from_array(zeros_first)).data.any()


def test_simple_gate_hand_case():
    x = ImagePlane.from_array(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    out = simple_gate(x)
    assert np.allclose(out.data[0, 0], [3.0, 8.0])


def test_simple_gate_odd_channels():
    with pytest.raises(ChannelError):
        simple_gate(ImagePlane.from_array(np.zeros((2, 2, 3))))


def test_sca_zero_weights():
    x = ImagePlane.from_array(np.ones((3, 3, 2)))
    p = ConvParams(np.zeros((2, 2, 1, 1), np.float32), np.zeros(2, np.float32))
    assert not sca(x, p).data.any()


def test_sca_constant_map_squares():
    c = 0.4
    x = ImagePlane.from_array(np.full((4, 4, 3), c, dtype=np.float32))
    p = ConvParams(np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1), np.zeros(3, np.float32))
    out = sca(x, p)
    assert np.allclose(out.data, np.float32(c) ** 2, atol=1e-7)


def test_sca_matches_hand_computation():
    rng = np.random.default_rng(39)
    data = rng.random((2, 2, 2)).astype(np.float32)
    w = rng.standard_normal((2, 2, 1, 1)).astype(np.float32)
    bias = rng.standard_normal(2).astype(np.float32)
    out = sca(ImagePlane.from_array(data), ConvParams(w, bias))
    pooled = data.astype(np.float64).mean(axis=(0, 1))
    scale = w[:, :, 0, 0].astype(np.float64) @ pooled + bias
    assert np.allclose(out.data, (data.astype(np.float64) * scale).astype(np.float32), atol=1e-7)


def test_sca_requires_1x1_square_map():
    x = ImagePlane.from_array(np.zeros((2, 2, 2)))
    with pytest.raises(ChannelError):
        sca(x, ConvParams(np.zeros((2, 2, 3, 3), np.float32), np.zeros(2, np.float32)))


def test_block_graph_validates_adjacency():
    with pytest.raises(ChannelError):
        BlockGraph((GraphOp("conv", "a", 3, 8), GraphOp("conv", "b", 4, 3)))
    with pytest.raises(ChannelError):
        BlockGraph((GraphOp("simple_gate", "", 5, 2),))
    with pytest.raises(ValueError):
        BlockGraph((GraphOp("relu", "", 3, 3),))


def test_registry_has_no_saturating_ops():
    banned = ("relu", "sigmoid", "softmax", "tanh", "gelu", "silu")
    for name in OPERATOR_REGISTRY:
        assert not any(tag in name for tag in banned)


def test_nsr_zero_weights_is_identity():
    rng = np.random.default_rng(40)
    x = ImagePlane.from_array(rng.random((8, 8, 3), dtype=np.float32))
    weights = _zero_container(nsr_tensor_specs(width=4))
    out = nsr_forward(x, weights)
    assert np.array_equal(out.data, x.data)


def test_nsr_shape_contract():
    rng = np.random.default_rng(41)
    x = ImagePlane.from_array(rng.random((10, 14, 3), dtype=np.float32))
    weights = WeightContainer(materialize_specs(nsr_tensor_specs(width=4), seed=11), {})
    out = nsr_forward(x, weights)
    assert (out.height, out.width, out.channels) == (10, 14, 3)


def test_nsr_missing_tensor_is_named():
    tensors = materialize_specs(nsr_tensor_specs(width=4), seed=11)
    del tensors["nsr.enc1.sca.kernel"]
    x = ImagePlane.from_array(np.zeros((8, 8, 3)))
    with pytest.raises(WeightFormatError, match="nsr.enc1.sca.kernel"):
        nsr_forward(x, WeightContainer(tensors, {}))


def test_nsr_golden_snapshot():
    rng = np.random.default_rng(42)
    x = ImagePlane.from_array(rng.random((8, 8, 3), dtype=np.float32))
    weights = WeightContainer(materialize_specs(nsr_tensor_specs(width=4), seed=101), {})
    out = nsr_forward(x, weights)
    check_golden("nsr_w4_s101", out.data)


def test_mask_net_constant_outputs():
    rng = np.random.default_rng(43)
    imgs = [ImagePlane.from_array(rng.random((6, 6, 3), dtype=np.float32)) for _ in range(3)]
    tensors = {name: np.zeros(shape, np.float32) for name, shape, _, _ in mask_tensor_specs()}
    tensors["mask.conv3.bias"] = np.ones(1, np.float32)
    mask = mask_net_forward(*imgs, WeightContainer(tensors, {}))
    assert mask.channels == 1
    assert np.allclose(mask.data, 1.0)
    mask0 = mask_net_forward(*imgs, _zero_container(mask_tensor_specs()))
    assert not mask0.data.any()


def test_mask_net_golden_snapshot():
    rng = np.random.default_rng(44)
    imgs = [ImagePlane.from_array(rng.random((6, 6, 3), dtype=np.float32)) for _ in range(3)]
    weights = WeightContainer(materialize_specs(mask_tensor_specs(), seed=202), {})
    mask = mask_net_forward(*imgs, weights)
    check_golden("mask_s202", mask.data)


def test_mask_net_rejects_mismatched_inputs():
    a = ImagePlane.from_array(np.zeros((6, 6, 3)))
    b = ImagePlane.from_array(np.zeros((5, 6, 3)))
    weights = _zero_container(mask_tensor_specs())
    with pytest.raises(DimensionError):
        mask_net_forward(a, b, a, weights)
    gray = ImagePlane.from_array(np.zeros((6, 6, 1)))
    with pytest.raises(ChannelError):
        mask_net_forward(a, a, gray, weights)


def test_apply_mask_laws():
    rng = np.random.default_rng(45)
    hf = ImagePlane.from_array(rng.standard_normal((5, 5, 3)).astype(np.float32))
    ones = ImagePlane.from_array(np.ones((5, 5, 1), np.float32))
    zeros = ImagePlane.from_array(np.zeros((5, 5, 1), np.float32))
    assert np.array_equal(apply_mask(hf, ones).data, hf.data)
    assert not apply_mask(hf, zeros).data.any()
    half = ImagePlane.from_array(np.full((5, 5, 1), 0.5, np.float32))
    hf_half = ImagePlane.from_array(np.full((5, 5, 3), 0.5, np.float32))
    assert np.allclose(apply_mask(hf_half, half).data, 0.25)


def test_apply_mask_errors():
    hf = ImagePlane.from_array(np.zeros((4, 4, 3)))
    with pytest.raises(DimensionError):
        apply_mask(hf, ImagePlane.from_array(np.zeros((3, 4, 1))))
    with pytest.raises(ChannelError):
        apply_mask(hf, ImagePlane.from_array(np.zeros((4, 4, 2))))


def test_avg_pool_partial_windows():
    data = np.arange(15, dtype=np.float64).reshape(5, 3, 1)
    out = _avg_pool(data, 2)
    assert out.shape == (3, 2, 1)
    # top-left full window: mean of 0,1,3,4; bottom-right partial: mean of 14
    assert np.isclose(out[0, 0, 0], 2.0)
    assert np.isclose(out[2, 1, 0], 14.0)


def test_msrm_identity_with_open_gate():
    rng = np.random.default_rng(46)
    x = ImagePlane.from_array(rng.random((16, 16, 3), dtype=np.float32))
    tensors = {name: np.zeros(shape, np.float32) for name, shape, _, _ in msrm_tensor_specs(3)}
    tensors["msrm.se2.bias"] = np.full(3, 40.0, np.float32)
    out = msrm_forward(x, WeightContainer(tensors, {}))
    assert np.array_equal(out.data, x.data)


def test_msrm_closed_gate_zeroes_features():
    rng = np.random.default_rng(47)
    x = ImagePlane.from_array(rng.random((16, 16, 3), dtype=np.float32))
    tensors = {name: np.zeros(shape, np.float32) for name, shape, _, _ in msrm_tensor_specs(3)}
    tensors["msrm.se2.bias"] = np.full(3, -40.0, np.float32)
    out = msrm_forward(x, WeightContainer(tensors, {}))
    assert np.max(np.abs(out.data)) < 1e-12


def test_msrm_golden_snapshot():
    rng = np.random.default_rng(48)
    x = ImagePlane.from_array(rng.random((16, 16, 3), dtype=np.float32))
    weights = WeightContainer(materialize_specs(msrm_tensor_specs(3), seed=303), {})
    out = msrm_forward(x, weights)
    assert (out.height, out.width, out.channels) == (16, 16, 3)
    check_golden("msrm_s303", out.data)
