"""Image containers, file I/O and bilinear resampling.

Images are plain ``numpy`` arrays: ``(H, W, C)`` float32 for color and
``(H, W)`` float32 for single-channel maps (depth). Validity masks are
``(H, W)`` bool arrays. Pixel ``(row, col)`` covers ``[col, col+1) x
[row, row+1)`` in continuous coordinates, so its center is at
``(col + 0.5, row + 0.5)``.
"""
import struct
import zlib

import cv2
import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Malformed image file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(ImageFormatError):
    """Well-formed file using a feature we do not decode."""


def _check_png_structure(buf):
    """Walk the chunk list, verify CRCs and return (bit_depth, color_type)."""
    if buf[:8] != PNG_SIGNATURE:
        raise ImageFormatError("missing PNG signature", 0)
    pos = 8
    header = None
    seen_end = False
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise ImageFormatError("truncated chunk header", pos)
        length, ctype = struct.unpack(">I4s", buf[pos:pos + 8])
        end = pos + 12 + length
        if end > len(buf):
            raise ImageFormatError(f"chunk {ctype!r} runs past end of file", pos)
        crc = struct.unpack(">I", buf[end - 4:end])[0]
        if zlib.crc32(buf[pos + 4:end - 4]) & 0xFFFFFFFF != crc:
            raise ImageFormatError(f"CRC mismatch in chunk {ctype!r}", pos)
        if header is None:
            if ctype != b"IHDR" or length != 13:
                raise ImageFormatError("first chunk is not a valid IHDR", pos)
            header = struct.unpack(">IIBBBBB", buf[pos + 8:pos + 21])
        if ctype == b"IEND":
            seen_end = True
            break
        pos = end
    if not seen_end:
        raise ImageFormatError("missing IEND chunk", pos)
    _, _, bit_depth, color_type, _, _, _ = header
    if bit_depth not in (8, 16):
        raise UnsupportedFormatError(f"unsupported PNG bit depth {bit_depth}", 24)
    if color_type not in (0, 2, 4, 6):
        raise UnsupportedFormatError(f"unsupported PNG color type {color_type}", 25)
    return bit_depth, color_type


def load_png(path):
    """Read an 8- or 16-bit PNG as float32 in [0, 1].

    Grayscale files come back as ``(H, W)``; RGB / RGBA as ``(H, W, 3|4)``.
    Integer value ``v`` maps to ``v / (2**bits - 1)``.
    """
    with open(path, "rb") as f:
        buf = f.read()
    bit_depth, _ = _check_png_structure(buf)
    raw = cv2.imdecode(np.frombuffer(buf, np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"could not decode image data in {path}", 8)
    if raw.ndim == 3:
        if raw.shape[2] == 3:
            raw = raw[:, :, ::-1]
        elif raw.shape[2] == 4:
            raw = raw[:, :, [2, 1, 0, 3]]
    maxval = float(2 ** bit_depth - 1)
    return (raw.astype(np.float64) / maxval).astype(np.float32)


def quantize(img, bits=8):
    """Clamp to [0, 1] and quantize with round-half-up."""
    maxval = 2 ** bits - 1
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.floor(x * maxval + 0.5)
    return q.astype(np.uint16 if bits == 16 else np.uint8)


def save_png(path, img, bits=8):
    if bits not in (8, 16):
        raise UnsupportedFormatError(f"unsupported PNG bit depth {bits}")
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.dtype == bool:
        img = img.astype(np.float32)
    q = quantize(img, bits)
    if q.ndim == 3:
        if q.shape[2] == 3:
            q = q[:, :, ::-1]
        elif q.shape[2] == 4:
            q = q[:, :, [2, 1, 0, 3]]
        else:
            raise ValueError(f"cannot write {q.shape[2]}-channel PNG")
    ok, enc = cv2.imencode(".png", np.ascontiguousarray(q))
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    with open(path, "wb") as f:
        f.write(enc.tobytes())


def save_mask(path, mask):
    """Binary mask as an 8-bit PNG with values 0/255."""
    save_png(path, np.asarray(mask, dtype=bool).astype(np.float32))


def load_mask(path):
    m = load_png(path)
    if m.ndim == 3:
        m = m[:, :, 0]
    return m >= 0.5


def _read_token_line(buf, pos):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ImageFormatError("unterminated PFM header line", pos)
    return buf[pos:end].decode("ascii", errors="replace").strip(), end + 1


def load_pfm(path):
    """Read a PFM file. ``Pf`` gives ``(H, W)``, ``PF`` gives ``(H, W, 3)``.

    Rows are stored bottom-to-top; a negative scale means little-endian.
    """
    with open(path, "rb") as f:
        buf = f.read()
    ident, pos = _read_token_line(buf, 0)
    if ident == "PF":
        channels = 3
    elif ident == "Pf":
        channels = 1
    else:
        raise ImageFormatError(f"bad PFM identifier {ident!r}", 0)
    dims_at = pos
    dims, pos = _read_token_line(buf, pos)
    try:
        width, height = (int(t) for t in dims.split())
    except ValueError:
        raise ImageFormatError(f"bad PFM dimensions {dims!r}", dims_at) from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"bad PFM dimensions {dims!r}", dims_at)
    scale_at = pos
    scale_txt, pos = _read_token_line(buf, pos)
    try:
        scale = float(scale_txt)
    except ValueError:
        raise ImageFormatError(f"bad PFM scale {scale_txt!r}", scale_at) from None
    if scale == 0.0:
        raise ImageFormatError("PFM scale must be nonzero", scale_at)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    if len(buf) - pos < count * 4:
        raise ImageFormatError(
            f"PFM payload too short: need {count * 4} bytes, have {len(buf) - pos}", pos)
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data))[0])
        raise ImageFormatError("non-finite value in PFM payload", pos + 4 * bad)
    data = data.astype(np.float32).reshape(height, width, channels)[::-1]
    if channels == 1:
        data = data[:, :, 0]
    return np.ascontiguousarray(data)


def save_pfm(path, img):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        ident = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        ident = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("refusing to write non-finite values to PFM")
    h, w = img.shape[:2]
    header = ident + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + payload)


def bilinear_taps(u, v, width, height, wrap_u=False):
    """Indices and weights of the 4 texels around continuous coords (u, v).

    Returns ``(rows, cols, weights)`` each with shape ``u.shape + (4,)``.
    ``v`` is clamped; ``u`` is clamped or wrapped modulo ``width``.
    """
    x = np.asarray(u, dtype=np.float64) - 0.5
    y = np.asarray(v, dtype=np.float64) - 0.5
    if not wrap_u:
        x = np.clip(x, 0.0, width - 1)
    y = np.clip(y, 0.0, height - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    if wrap_u:
        x1 = (x0 + 1) % width
        x0 = x0 % width
    else:
        x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    rows = np.stack([y0, y0, y1, y1], axis=-1)
    cols = np.stack([x0, x1, x0, x1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return rows, cols, w


def bilinear_sample(img, u, v, wrap_u=False):
    """Sample ``img`` at continuous pixel coordinates.

    ``u`` is the horizontal coordinate, ``v`` the vertical one; both may be
    arrays of any (matching) shape. Set ``wrap_u`` for equirectangular
    images so the left and right borders are joined.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    rows, cols, wt = bilinear_taps(u, v, w, h, wrap_u)
    taps = img[rows, cols]
    if img.ndim == 3:
        wt = wt[..., None]
    return (taps * wt).sum(axis=-2 if img.ndim == 3 else -1)
