"""NetPBM codec tests: round trips must be byte-identical, malformed input
must be rejected with a clear error."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mattekit.matting import BG, FG, UNKNOWN
from mattekit.netpbm import (
    PNMError,
    dequantize,
    pnm_bytes,
    quantize_unit,
    read_alpha,
    read_image,
    read_pnm,
    read_trimap,
    write_alpha,
    write_image,
    write_pnm,
    write_trimap,
)


class TestRoundTrip:
    def test_p5_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, (13, 7)).astype(np.uint8)
        p = tmp_path / "a.pgm"
        write_pnm(p, arr)
        back, maxval = read_pnm(p)
        assert maxval == 255
        np.testing.assert_array_equal(back, arr)
        # Re-encoding the decoded array reproduces the file bytes.
        assert pnm_bytes(back) == p.read_bytes()

    def test_p6_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, (5, 9, 3)).astype(np.uint8)
        p = tmp_path / "a.ppm"
        write_pnm(p, arr)
        back, maxval = read_pnm(p)
        np.testing.assert_array_equal(back, arr)
        assert pnm_bytes(back) == p.read_bytes()

    def test_16bit_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        arr = rng.integers(0, 65536, (6, 4)).astype(np.uint16)
        p = tmp_path / "w.pgm"
        write_pnm(p, arr, maxval=65535)
        back, maxval = read_pnm(p)
        assert maxval == 65535
        assert back.dtype == np.uint16
        np.testing.assert_array_equal(back, arr)
        assert pnm_bytes(back, 65535) == p.read_bytes()

    def test_16bit_is_big_endian_on_disk(self):
        arr = np.array([[0x0102]], dtype=np.uint16)
        data = pnm_bytes(arr, maxval=65535)
        assert data.endswith(b"\x01\x02")

    def test_header_format(self):
        data = pnm_bytes(np.zeros((2, 3), dtype=np.uint8))
        assert data.startswith(b"P5\n3 2\n255\n")
        assert len(data) == len(b"P5\n3 2\n255\n") + 6

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
    def test_random_round_trips(self, h, w, seed):
        arr = np.random.default_rng(seed).integers(0, 256, (h, w, 3)).astype(np.uint8)
        buf = io.BytesIO(pnm_bytes(arr))
        back, _ = read_pnm(buf)
        np.testing.assert_array_equal(back, arr)


class TestHeaderParsing:
    def test_comments_tolerated(self):
        data = b"P5\n# a comment\n2 1\n# another\n255\n\x00\xff"
        arr, maxval = read_pnm(io.BytesIO(data))
        np.testing.assert_array_equal(arr, [[0, 255]])

    def test_crlf_and_extra_whitespace(self):
        data = b"P5\r\n  2   1 \t 255\n\x07\x09"
        arr, _ = read_pnm(io.BytesIO(data))
        np.testing.assert_array_equal(arr, [[7, 9]])

    def test_raster_may_start_with_whitespace_byte(self):
        # The single separator after maxval is consumed; a raster whose
        # first sample happens to be 0x20 must survive.
        arr = np.array([[0x20, 0x0A]], dtype=np.uint8)
        buf = io.BytesIO(pnm_bytes(arr))
        back, _ = read_pnm(buf)
        np.testing.assert_array_equal(back, arr)


class TestRejection:
    def test_ascii_magic_rejected(self):
        with pytest.raises(PNMError, match="magic"):
            read_pnm(io.BytesIO(b"P2\n1 1\n255\n0"))

    def test_garbage_rejected(self):
        with pytest.raises(PNMError):
            read_pnm(io.BytesIO(b"hello world"))

    def test_truncated_raster(self):
        with pytest.raises(PNMError, match="truncated"):
            read_pnm(io.BytesIO(b"P5\n4 4\n255\n\x00\x00"))

    def test_truncated_header(self):
        with pytest.raises(PNMError):
            read_pnm(io.BytesIO(b"P5\n4"))

    def test_zero_dimension(self):
        with pytest.raises(PNMError, match="positive"):
            read_pnm(io.BytesIO(b"P5\n0 4\n255\n"))

    def test_nonnumeric_dimension(self):
        with pytest.raises(PNMError, match="non-numeric"):
            read_pnm(io.BytesIO(b"P5\nx 4\n255\n\x00"))

    def test_huge_maxval(self):
        with pytest.raises(PNMError, match="maxval"):
            read_pnm(io.BytesIO(b"P5\n1 1\n70000\n\x00\x00"))

    def test_sample_over_maxval(self):
        with pytest.raises(PNMError, match="exceeds"):
            read_pnm(io.BytesIO(b"P5\n1 1\n100\n\xff"))

    def test_write_rejects_bad_shape(self):
        with pytest.raises(PNMError):
            write_pnm(io.BytesIO(), np.zeros((2, 2, 4), dtype=np.uint8))

    def test_write_rejects_floats(self):
        with pytest.raises(PNMError, match="integer"):
            write_pnm(io.BytesIO(), np.zeros((2, 2)))

    def test_write_rejects_out_of_range(self):
        with pytest.raises(PNMError):
            write_pnm(io.BytesIO(), np.full((2, 2), 300, dtype=np.int32), maxval=255)


class TestQuantize:
    def test_round_trip_error_bound(self):
        rng = np.random.default_rng(3)
        a = rng.random((32, 32))
        back = dequantize(quantize_unit(a))
        assert np.abs(back - a).max() <= 0.5 / 255 + 1e-12

    def test_rounds_half_up(self):
        # 0.5/255 quantizes to 1, just under stays at 0.
        assert quantize_unit(np.array([[0.5 / 255]]))[0, 0] == 1
        assert quantize_unit(np.array([[0.49 / 255]]))[0, 0] == 0

    def test_clips(self):
        q = quantize_unit(np.array([[-0.5, 1.5]]))
        np.testing.assert_array_equal(q[0], [0, 255])

    def test_endpoints_exact(self):
        q = quantize_unit(np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(q[0], [0, 255])

    def test_16bit_quantize(self):
        q = quantize_unit(np.array([[1.0]]), maxval=65535)
        assert q[0, 0] == 65535 and q.dtype == np.uint16


class TestHighLevel:
    def test_image_write_read(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.random((8, 6, 3))
        p = tmp_path / "img.ppm"
        write_image(p, img)
        back = read_image(p)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_alpha_write_read(self, tmp_path):
        rng = np.random.default_rng(5)
        a = rng.random((8, 6))
        p = tmp_path / "a.pgm"
        write_alpha(p, a)
        back = read_alpha(p)
        assert np.abs(back - a).max() <= 0.5 / 255 + 1e-12

    def test_trimap_write_read_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        t = rng.integers(0, 3, (9, 9)).astype(np.uint8)
        p = tmp_path / "t.pgm"
        write_trimap(p, t)
        np.testing.assert_array_equal(read_trimap(p), t)

    def test_trimap_rejects_off_levels(self, tmp_path):
        p = tmp_path / "bad.pgm"
        write_pnm(p, np.array([[0, 100, 255]], dtype=np.uint8))
        with pytest.raises(PNMError):
            read_trimap(p)

    def test_trimap_snap(self, tmp_path):
        p = tmp_path / "near.pgm"
        write_pnm(p, np.array([[3, 130, 250]], dtype=np.uint8))
        t = read_trimap(p, snap=True)
        np.testing.assert_array_equal(t[0], [BG, UNKNOWN, FG])

    def test_image_reader_rejects_gray(self, tmp_path):
        p = tmp_path / "g.pgm"
        write_pnm(p, np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(PNMError):
            read_image(p)

    def test_alpha_reader_rejects_color(self, tmp_path):
        p = tmp_path / "c.ppm"
        write_pnm(p, np.zeros((2, 2, 3), dtype=np.uint8))
        with pytest.raises(PNMError):
            read_alpha(p)
