import struct
import zlib

import cv2
import numpy as np
import pytest
from skimage import color as skcolor

from filmgrade import (
    AlphaStrippedWarning,
    ChannelError,
    DimensionError,
    ImagePlane,
    LabColor,
    PngFormatError,
    lab_to_srgb,
    load_png,
    resize_bilinear,
    save_png,
    srgb_to_lab,
)
from filmgrade.image_core import lab_array_to_srgb, srgb_array_to_lab


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def _make_png(width, height, depth, color_type, rows, interlace=0, plte=None) -> bytes:
    """Assemble a minimal PNG by hand so exotic header combos can be tested."""
    ihdr = struct.pack(">IIBBBBB", width, height, depth, color_type, 0, 0, interlace)
    out = [b"\x89PNG\r\n\x1a\n", _chunk(b"IHDR", ihdr)]
    if plte is not None:
        out.append(_chunk(b"PLTE", plte))
    out.append(_chunk(b"IDAT", zlib.compress(rows)))
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def test_image_plane_wraps_2d_as_single_channel():
    img = ImagePlane.from_array(np.zeros((4, 5)))
    assert (img.height, img.width, img.channels) == (4, 5, 1)
    assert img.data.dtype == np.float32
    assert not img.data.flags.writeable


def test_image_plane_rejects_wrong_rank():
    with pytest.raises(DimensionError):
        ImagePlane(np.zeros((4, 5, 3, 1), dtype=np.float32))


def test_load_16bit_rgb_scales_by_65535(tmp_path):
    p = tmp_path / "mid.png"
    arr = np.full((2, 3, 3), 32768, dtype=np.uint16)
    assert cv2.imwrite(str(p), arr[:, :, ::-1])
    img = load_png(p)
    assert img.data.shape == (2, 3, 3)
    assert np.allclose(img.data, 32768.0 / 65535.0, atol=1e-7)


def test_load_8bit_gray_is_single_channel(tmp_path):
    p = tmp_path / "g.png"
    assert cv2.imwrite(str(p), np.arange(6, dtype=np.uint8).reshape(2, 3) * 40)
    img = load_png(p)
    assert img.channels == 1
    assert np.isclose(img.data[1, 2, 0], 200.0 / 255.0)


def test_save_rounds_half_up(tmp_path):
    p = tmp_path / "half.png"
    save_png(ImagePlane.from_array(np.full((1, 1, 1), 0.5)), p, bitdepth=8)
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    assert raw.reshape(-1)[0] == 128


def test_save_clamps_out_of_range(tmp_path):
    p = tmp_path / "clamp.png"
    arr = np.array([[[-0.25, 0.5, 1.5]]], dtype=np.float32)
    save_png(ImagePlane.from_array(arr), p, bitdepth=8)
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)[0, 0][::-1]
    assert list(raw) == [0, 128, 255]


def test_save_load_16bit_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    src = ImagePlane.from_array(rng.random((9, 7, 3), dtype=np.float32))
    p = tmp_path / "rt.png"
    save_png(src, p, bitdepth=16)
    back = load_png(p)
    assert np.max(np.abs(back.data - src.data)) <= 0.5 / 65535.0 + 1e-7


def test_save_rejects_two_channels(tmp_path):
    with pytest.raises(ChannelError):
        save_png(ImagePlane.from_array(np.zeros((2, 2, 2))), tmp_path / "x.png")


def test_save_rejects_odd_bitdepth(tmp_path):
    with pytest.raises(PngFormatError):
        save_png(ImagePlane.from_array(np.zeros((2, 2, 1))), tmp_path / "x.png", bitdepth=12)


def test_load_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_png(tmp_path / "nope.png")


def test_load_rejects_non_png(tmp_path):
    p = tmp_path / "fake.png"
    p.write_bytes(b"JFIF not a png at all, just bytes long enough to parse")
    with pytest.raises(PngFormatError):
        load_png(p)


def test_load_rejects_palette(tmp_path):
    p = tmp_path / "pal.png"
    p.write_bytes(_make_png(1, 1, 8, 3, b"\x00\x00", plte=bytes([255, 0, 0])))
    with pytest.raises(PngFormatError, match="palette"):
        load_png(p)


def test_load_rejects_interlaced(tmp_path):
    p = tmp_path / "adam7.png"
    p.write_bytes(_make_png(1, 1, 8, 0, b"\x00\x80", interlace=1))
    with pytest.raises(PngFormatError, match="interlace"):
        load_png(p)


def test_load_rejects_low_bit_depth(tmp_path):
    p = tmp_path / "onebit.png"
    p.write_bytes(_make_png(1, 1, 1, 0, b"\x00\x80"))
    with pytest.raises(PngFormatError, match="depth"):
        load_png(p)


def test_load_strips_rgba_alpha_with_warning(tmp_path):
    p = tmp_path / "rgba.png"
    bgra = np.zeros((2, 2, 4), dtype=np.uint8)
    bgra[:, :, 2] = 255  # red
    bgra[:, :, 3] = 33
    assert cv2.imwrite(str(p), bgra)
    with pytest.warns(AlphaStrippedWarning):
        img = load_png(p)
    assert img.channels == 3
    assert np.allclose(img.data[0, 0], [1.0, 0.0, 0.0])


def test_load_strips_gray_alpha_with_warning(tmp_path):
    p = tmp_path / "la.png"
    p.write_bytes(_make_png(1, 1, 8, 4, b"\x00\x78\xc8"))
    with pytest.warns(AlphaStrippedWarning):
        img = load_png(p)
    assert img.channels == 1
    assert np.isclose(img.data[0, 0, 0], 120.0 / 255.0)


def test_resize_upsample_oracle():
    # 2 -> 4 with half-pixel centers lands at source offsets -0.25, 0.25, 0.75, 1.25.
    img = ImagePlane.from_array(np.array([[0.0, 1.0]], dtype=np.float32).reshape(1, 2, 1))
    out = resize_bilinear(img, 1, 4)
    assert np.allclose(out.data[0, :, 0], [0.0, 0.25, 0.75, 1.0])


def test_resize_downsample_averages():
    img = ImagePlane.from_array(np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32))
    out = resize_bilinear(img, 1, 1)
    assert np.isclose(out.data[0, 0, 0], 0.5)


def test_resize_identity_returns_same_pixels():
    rng = np.random.default_rng(3)
    img = ImagePlane.from_array(rng.random((5, 4, 3), dtype=np.float32))
    out = resize_bilinear(img, 5, 4)
    assert np.array_equal(out.data, img.data)


def test_resize_stays_in_input_range():
    rng = np.random.default_rng(4)
    img = ImagePlane.from_array(rng.random((8, 6, 3), dtype=np.float32))
    for th, tw in [(3, 3), (17, 2), (8, 13), (1, 1)]:
        out = resize_bilinear(img, th, tw)
        assert out.data.min() >= img.data.min() - 1e-6
        assert out.data.max() <= img.data.max() + 1e-6


def test_resize_matches_opencv():
    rng = np.random.default_rng(5)
    arr = rng.random((10, 9, 3), dtype=np.float32)
    out = resize_bilinear(ImagePlane.from_array(arr), 23, 14)
    ref = cv2.resize(arr, (14, 23), interpolation=cv2.INTER_LINEAR)
    assert np.max(np.abs(out.data - ref)) < 1e-5


def test_resize_rejects_nonpositive():
    img = ImagePlane.from_array(np.zeros((2, 2, 1)))
    with pytest.raises(DimensionError):
        resize_bilinear(img, 0, 4)


def test_lab_primaries():
    red = srgb_to_lab([1.0, 0.0, 0.0])
    assert isinstance(red, LabColor)
    assert abs(red.L - 53.24) < 0.05
    assert abs(red.a - 80.09) < 0.05
    assert abs(red.b - 67.20) < 0.05
    black = srgb_to_lab([0.0, 0.0, 0.0])
    assert abs(black.L) < 1e-9 and abs(black.a) < 1e-9 and abs(black.b) < 1e-9
    white = srgb_to_lab([1.0, 1.0, 1.0])
    assert abs(white.L - 100.0) < 1e-3
    assert abs(white.a) < 1e-2 and abs(white.b) < 1e-2


def test_lab_matches_skimage_on_random_colors():
    rng = np.random.default_rng(6)
    rgb = rng.random((16, 16, 3))
    ours = srgb_array_to_lab(rgb)
    ref = skcolor.rgb2lab(rgb)
    # skimage derives its RGB->XYZ matrix at higher precision than the
    # 7-decimal standard coefficients used here; agreement is ~5e-3 Lab units.
    assert np.max(np.abs(ours - ref)) < 1e-2


def test_lab_round_trip():
    rng = np.random.default_rng(7)
    rgb = rng.random((32, 3))
    back = lab_array_to_srgb(srgb_array_to_lab(rgb))
    assert np.max(np.abs(back - rgb)) < 1e-9
    triple = lab_to_srgb(srgb_to_lab([0.2, 0.5, 0.8]))
    assert np.allclose(triple, [0.2, 0.5, 0.8], atol=1e-9)
