import struct
import zlib

import numpy as np
import pytest

from panolight.imageio import (ImageFormatError, UnsupportedFormatError, bilinear_sample,
                               load_mask, load_pfm, load_png, quantize, save_mask, save_pfm,
                               save_png)


@pytest.mark.parametrize("bits", [8, 16])
def test_png_roundtrip_is_quantization(tmp_path, rng, bits):
    img = rng.uniform(size=(7, 9, 3)).astype(np.float32)
    save_png(tmp_path / "a.png", img, bits)
    back = load_png(tmp_path / "a.png")
    maxval = 2 ** bits - 1
    np.testing.assert_array_equal(back, (quantize(img, bits) / maxval).astype(np.float32))
    assert np.abs(back - img).max() <= 0.5 / maxval + 1e-7


def test_png_gray_and_rgba(tmp_path, rng):
    g = rng.uniform(size=(5, 6)).astype(np.float32)
    save_png(tmp_path / "g.png", g)
    assert load_png(tmp_path / "g.png").shape == (5, 6)
    rgba = rng.uniform(size=(5, 6, 4)).astype(np.float32)
    save_png(tmp_path / "c.png", rgba)
    back = load_png(tmp_path / "c.png")
    assert back.shape == (5, 6, 4)
    np.testing.assert_allclose(back, rgba, atol=0.5 / 255 + 1e-7)


def test_png_channel_order(tmp_path):
    img = np.zeros((2, 2, 3), np.float32)
    img[..., 0] = 1.0
    save_png(tmp_path / "r.png", img)
    np.testing.assert_array_equal(load_png(tmp_path / "r.png")[0, 0], [1, 0, 0])


def test_mask_roundtrip(tmp_path, rng):
    m = rng.uniform(size=(6, 12)) < 0.5
    save_mask(tmp_path / "m.png", m)
    raw = load_png(tmp_path / "m.png")
    assert set(np.unique(raw)) <= {0.0, 1.0}
    np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), m)


def _chunk(ctype, data):
    body = ctype + data
    return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)


def test_png_crc_error_reports_offset(tmp_path, rng):
    save_png(tmp_path / "a.png", rng.uniform(size=(4, 4, 3)))
    buf = bytearray((tmp_path / "a.png").read_bytes())
    buf[20] ^= 0xFF  # inside the IHDR payload
    (tmp_path / "b.png").write_bytes(bytes(buf))
    with pytest.raises(ImageFormatError) as exc:
        load_png(tmp_path / "b.png")
    assert exc.value.offset == 8
    assert "offset 8" in str(exc.value)


def test_png_unsupported_bit_depth(tmp_path):
    ihdr = struct.pack(">IIBBBBB", 2, 2, 4, 0, 0, 0, 0)
    raw = zlib.compress(b"\x00\x00" * 2)
    buf = b"\x89PNG\r\n\x1a\n" + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", raw) + _chunk(b"IEND", b"")
    (tmp_path / "a.png").write_bytes(buf)
    with pytest.raises(UnsupportedFormatError):
        load_png(tmp_path / "a.png")


def test_png_bad_signature(tmp_path):
    (tmp_path / "a.png").write_bytes(b"not a png at all")
    with pytest.raises(ImageFormatError) as exc:
        load_png(tmp_path / "a.png")
    assert exc.value.offset == 0


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_pfm_roundtrip_bit_exact(tmp_path, rng, shape):
    img = rng.normal(size=shape).astype(np.float32) * 100
    save_pfm(tmp_path / "a.pfm", img)
    np.testing.assert_array_equal(load_pfm(tmp_path / "a.pfm"), img)


def test_pfm_layout_is_bottom_to_top_little_endian(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    save_pfm(tmp_path / "a.pfm", img)
    buf = (tmp_path / "a.pfm").read_bytes()
    assert buf.startswith(b"Pf\n2 2\n-1.0\n")
    payload = np.frombuffer(buf[len(b"Pf\n2 2\n-1.0\n"):], "<f4")
    np.testing.assert_array_equal(payload, [3, 4, 1, 2])


def test_pfm_big_endian(tmp_path):
    vals = np.array([[1.5, -2.0, 3.25]], np.float32)
    buf = b"Pf\n3 1\n1.0\n" + vals.astype(">f4").tobytes()
    (tmp_path / "a.pfm").write_bytes(buf)
    np.testing.assert_array_equal(load_pfm(tmp_path / "a.pfm"), vals)


def test_pfm_nan_rejected_with_offset(tmp_path):
    head = b"Pf\n2 1\n-1.0\n"
    (tmp_path / "a.pfm").write_bytes(head + np.array([1.0, np.nan], "<f4").tobytes())
    with pytest.raises(ImageFormatError) as exc:
        load_pfm(tmp_path / "a.pfm")
    assert exc.value.offset == len(head) + 4


@pytest.mark.parametrize("buf", [b"PX\n1 1\n-1\n\0\0\0\0", b"Pf\nx 1\n-1\n\0\0\0\0",
                                 b"Pf\n1 1\n0\n\0\0\0\0", b"Pf\n2 2\n-1\n\0\0\0\0"])
def test_pfm_malformed(tmp_path, buf):
    (tmp_path / "a.pfm").write_bytes(buf)
    with pytest.raises(ImageFormatError):
        load_pfm(tmp_path / "a.pfm")


def test_save_pfm_refuses_nonfinite(tmp_path):
    with pytest.raises(ValueError):
        save_pfm(tmp_path / "a.pfm", np.array([[np.inf]]))


def test_bilinear_reproduces_linear_ramp():
    h, w = 6, 8
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    img = 2 * xx + 3 * yy
    u = np.array([0.5, 1.7, 3.25, 7.5])
    v = np.array([0.5, 2.2, 4.9, 5.5])
    np.testing.assert_allclose(bilinear_sample(img, u, v), 2 * u + 3 * v)


def test_bilinear_wraps_u():
    img = np.zeros((1, 4))
    img[0, 0] = 1.0
    # halfway between the last and first column centers
    np.testing.assert_allclose(bilinear_sample(img, np.array([4.0]), np.array([0.5]), True), [0.5])
    np.testing.assert_allclose(bilinear_sample(img, np.array([4.0]), np.array([0.5]), False), [0.0])
