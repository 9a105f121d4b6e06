"""Binary NetPBM image codecs (P5 grayscale, P6 RGB).

Only the binary variants are supported, with maxval 255 (one byte per
sample) or 65535 (two bytes, big-endian, per the format). Comment lines
beginning with '#' are tolerated in the header. Writes are canonical:

    P5\\n<width> <height>\\n<maxval>\\n<raster>

so write(read(f)) reproduces the exact bytes this module wrote.
"""

from __future__ import annotations

import io
import os
import numpy as np

from .matting import gray_to_trimap, trimap_to_gray


class PNMError(ValueError):
    """Malformed or unsupported NetPBM data."""


def _read_header_token(fp):
    # Tokens are separated by whitespace; '#' starts a comment to EOL.
    tok = b""
    while True:
        c = fp.read(1)
        if not c:
            if tok:
                return tok
            raise PNMError("unexpected end of file in header")
        if c == b"#":
            while c and c != b"\n":
                c = fp.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def _read_int_token(fp, what):
    tok = _read_header_token(fp)
    try:
        val = int(tok)
    except ValueError:
        raise PNMError(f"non-numeric {what}: {tok!r}") from None
    if val <= 0:
        raise PNMError(f"{what} must be positive, got {val}")
    return val


def read_pnm(path_or_fp):
    """Read a binary P5 or P6 file.

    Returns (array, maxval): grayscale arrays have shape (H, W), RGB
    (H, W, 3); dtype is uint8 for maxval <= 255 and uint16 otherwise.
    """
    if hasattr(path_or_fp, "read"):
        return _read_pnm_fp(path_or_fp)
    with open(path_or_fp, "rb") as fp:
        return _read_pnm_fp(fp)


def _read_pnm_fp(fp):
    magic = fp.read(2)
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}; only binary P5/P6")
    channels = 1 if magic == b"P5" else 3
    width = _read_int_token(fp, "width")
    height = _read_int_token(fp, "height")
    maxval = _read_int_token(fp, "maxval")
    if maxval >= 65536:
        raise PNMError(f"maxval {maxval} out of range (max 65535)")
    # The tokenizer consumed the single whitespace byte after maxval; the
    # raster begins immediately.
    two_byte = maxval > 255
    count = width * height * channels
    raw = fp.read(count * (2 if two_byte else 1))
    expected = count * (2 if two_byte else 1)
    if len(raw) != expected:
        raise PNMError(f"truncated raster: got {len(raw)} bytes, need {expected}")
    if two_byte:
        arr = np.frombuffer(raw, dtype=">u2").astype(np.uint16)
    else:
        arr = np.frombuffer(raw, dtype=np.uint8).copy()
    if (arr > maxval).any():
        raise PNMError(f"sample exceeds maxval {maxval}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape), maxval


def write_pnm(path_or_fp, array, maxval=255):
    """Write a binary P5 (2-d array) or P6 (H,W,3 array) file."""
    array = np.asarray(array)
    if array.ndim == 2:
        magic = b"P5"
    elif array.ndim == 3 and array.shape[2] == 3:
        magic = b"P6"
    else:
        raise PNMError(f"array shape {array.shape} is neither (H,W) nor (H,W,3)")
    if not (0 < maxval < 65536):
        raise PNMError(f"maxval {maxval} out of range")
    if not np.issubdtype(array.dtype, np.integer):
        raise PNMError(f"integer samples required, got dtype {array.dtype}")
    if array.min() < 0 or array.max() > maxval:
        raise PNMError(f"samples outside [0, {maxval}]")
    h, w = array.shape[:2]
    header = magic + b"\n" + f"{w} {h}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        raster = array.astype(">u2").tobytes()
    else:
        raster = array.astype(np.uint8).tobytes()
    if hasattr(path_or_fp, "write"):
        path_or_fp.write(header + raster)
    else:
        tmp = str(path_or_fp) + ".tmp"
        with open(tmp, "wb") as fp:
            fp.write(header + raster)
        os.replace(tmp, path_or_fp)


def quantize_unit(array, maxval=255):
    """[0,1] floats to integer samples by round-half-away-from-zero."""
    array = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    q = np.floor(array * maxval + 0.5).astype(np.uint16 if maxval > 255 else np.uint8)
    return q


def dequantize(array, maxval=255):
    """Integer samples back to [0,1] floats."""
    return np.asarray(array, dtype=np.float64) / float(maxval)


def write_image(path_or_fp, image, maxval=255):
    """Write a float [0,1] RGB image as P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PNMError(f"RGB image must be (H,W,3), got {image.shape}")
    write_pnm(path_or_fp, quantize_unit(image, maxval), maxval)


def read_image(path_or_fp):
    """Read a P6 file as a float [0,1] RGB image."""
    arr, maxval = read_pnm(path_or_fp)
    if arr.ndim != 3:
        raise PNMError("expected a P6 color file")
    return dequantize(arr, maxval)


def write_alpha(path_or_fp, alpha, maxval=255):
    """Write a float [0,1] alpha plane as P5."""
    alpha = np.asarray(alpha)
    if alpha.ndim != 2:
        raise PNMError(f"alpha must be (H,W), got {alpha.shape}")
    write_pnm(path_or_fp, quantize_unit(alpha, maxval), maxval)


def read_alpha(path_or_fp):
    """Read a P5 file as a float [0,1] alpha plane."""
    arr, maxval = read_pnm(path_or_fp)
    if arr.ndim != 2:
        raise PNMError("expected a P5 grayscale file")
    return dequantize(arr, maxval)


def write_trimap(path_or_fp, trimap):
    """Write a label trimap as P5 with the 0/128/255 gray convention."""
    write_pnm(path_or_fp, trimap_to_gray(trimap), 255)


def read_trimap(path_or_fp, snap=False):
    """Read a P5 trimap file; gray levels must be in {0,128,255} unless snap."""
    arr, maxval = read_pnm(path_or_fp)
    if arr.ndim != 2:
        raise PNMError("expected a P5 trimap file")
    if maxval != 255:
        raise PNMError(f"trimap files must have maxval 255, got {maxval}")
    try:
        return gray_to_trimap(arr, snap=snap)
    except ValueError as e:
        raise PNMError(str(e)) from None


def pnm_bytes(array, maxval=255):
    """In-memory encode, for byte-identity checks."""
    buf = io.BytesIO()
    write_pnm(buf, array, maxval)
    return buf.getvalue()
