import numpy as np
import pytest

from rocksr.errors import DataError
from rocksr.images import (
    DifferenceMap,
    GrayImage,
    difference_map,
    load_image,
    normalize,
    quantize,
    save_image,
)


class TestNormalization:
    @pytest.mark.parametrize("bits", [8, 16])
    def test_endpoints(self, bits):
        maxval = (1 << bits) - 1
        v = normalize(np.array([0, maxval]), bits)
        np.testing.assert_array_equal(v, np.array([-1.0, 1.0], dtype=np.float32))

    @pytest.mark.parametrize("bits", [8, 16])
    def test_every_level_roundtrips_exactly(self, bits):
        levels = np.arange((1 << bits), dtype=np.uint16 if bits == 16 else np.uint8)
        back = quantize(normalize(levels, bits), bits)
        np.testing.assert_array_equal(back, levels)

    def test_rounding_direction_near_boundaries(self):
        # level boundary between 126 and 127 sits at 126.5; approach from
        # both sides with an unambiguous margin
        x = lambda t: np.array([2 * t / 255 - 1], dtype=np.float64)
        assert quantize(x(126.6), 8)[0] == 127
        assert quantize(x(126.4), 8)[0] == 126

    def test_exact_half_rounds_away_from_zero(self):
        # pixel 0.0 maps to exactly 127.5 (8 bit) and 32767.5 (16 bit)
        assert quantize(np.array([0.0]), 8)[0] == 128
        assert quantize(np.array([0.0]), 16)[0] == 32768

    def test_out_of_range_clips(self):
        q = quantize(np.array([-1.5, 1.5]), 8)
        np.testing.assert_array_equal(q, [0, 255])


class TestPngIO:
    @pytest.mark.parametrize("bits", [8, 16])
    def test_roundtrip_is_lossless(self, tmp_path, rng, bits):
        maxval = (1 << bits) - 1
        dtype = np.uint8 if bits == 8 else np.uint16
        levels = rng.integers(0, maxval + 1, (17, 23)).astype(dtype)
        img = GrayImage(normalize(levels, bits), source_bit_depth=bits)
        path = tmp_path / "t.png"
        save_image(img, path)
        back = load_image(path)
        assert back.source_bit_depth == bits
        np.testing.assert_array_equal(quantize(back.pixels, bits), levels)
        np.testing.assert_array_equal(back.pixels, img.pixels)

    def test_color_png_rejected(self, tmp_path):
        from PIL import Image

        Image.new("RGB", (4, 4)).save(tmp_path / "c.png")
        with pytest.raises(DataError, match="mode"):
            load_image(tmp_path / "c.png")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_image(tmp_path / "nope.png")

    def test_garbage_bytes_rejected(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
        with pytest.raises(DataError):
            load_image(bad)

    def test_bit_depth_override_on_save(self, tmp_path, rng):
        levels = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        img = GrayImage(normalize(levels, 8), source_bit_depth=8)
        path = tmp_path / "wide.png"
        save_image(img, path, bit_depth=16)
        back = load_image(path)
        assert back.source_bit_depth == 16
        # widened quantization grid must keep values within one 16-bit step
        np.testing.assert_allclose(back.pixels, img.pixels, atol=2 / 65535)


class TestPgmIO:
    @pytest.mark.parametrize("bits", [8, 16])
    def test_roundtrip_is_lossless(self, tmp_path, rng, bits):
        maxval = (1 << bits) - 1
        dtype = np.uint8 if bits == 8 else np.uint16
        levels = rng.integers(0, maxval + 1, (5, 7)).astype(dtype)
        img = GrayImage(normalize(levels, bits), source_bit_depth=bits)
        path = tmp_path / "t.pgm"
        save_image(img, path)
        back = load_image(path)
        assert back.source_bit_depth == bits
        np.testing.assert_array_equal(quantize(back.pixels, bits), levels)

    def test_sixteen_bit_samples_are_big_endian(self, tmp_path):
        # one pixel with bytes (0x01, 0x00) must decode as 256, not 1
        path = tmp_path / "be.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x01\x00")
        img = load_image(path)
        assert quantize(img.pixels, 16)[0, 0] == 256

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n# depth\n255\n\x00\xff")
        img = load_image(path)
        np.testing.assert_array_equal(quantize(img.pixels, 8), [[0, 255]])

    def test_truncated_raster_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(DataError, match="truncated"):
            load_image(path)

    def test_ascii_pgm_rejected(self, tmp_path):
        path = tmp_path / "ascii.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(DataError, match="P5"):
            load_image(path)

    def test_odd_maxval_rejected(self, tmp_path):
        path = tmp_path / "odd.pgm"
        path.write_bytes(b"P5\n1 1\n1023\n\x00\x00")
        with pytest.raises(DataError, match="maxval"):
            load_image(path)


class TestGrayImage:
    def test_rejects_non_2d(self):
        with pytest.raises(DataError, match="2-D"):
            GrayImage(np.zeros((2, 2, 3)))

    def test_rejects_odd_bit_depth(self):
        with pytest.raises(DataError, match="depth"):
            GrayImage(np.zeros((2, 2)), source_bit_depth=12)

    def test_pixels_stored_float32(self):
        img = GrayImage(np.zeros((2, 2), dtype=np.float64))
        assert img.pixels.dtype == np.float32
        assert (img.height, img.width) == (2, 2)


class TestDifferenceMap:
    def test_absolute_difference_and_mean(self):
        a = GrayImage(np.array([[0.0, 0.5], [1.0, -1.0]], dtype=np.float32))
        b = GrayImage(np.array([[0.25, 0.5], [0.0, 1.0]], dtype=np.float32))
        d = difference_map(a, b)
        np.testing.assert_allclose(d.values, [[0.25, 0.0], [1.0, 2.0]])
        assert d.mean == pytest.approx((0.25 + 0 + 1 + 2) / 4)

    def test_quantized_rendering_saturates(self):
        d = DifferenceMap(np.array([[0.0, 1.0, 2.0, 4.0]], dtype=np.float32))
        np.testing.assert_array_equal(d.quantized(), [[0, 128, 255, 255]])

    def test_display_scale_amplifies(self):
        d = DifferenceMap(np.array([[0.1]], dtype=np.float32), display_scale=10.0)
        assert d.quantized()[0, 0] == 128

    def test_size_mismatch_rejected(self):
        with pytest.raises(DataError, match="equal sizes"):
            difference_map(GrayImage(np.zeros((2, 2))), GrayImage(np.zeros((3, 2))))
