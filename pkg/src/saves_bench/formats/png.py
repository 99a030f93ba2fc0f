"""16-bit single-channel PNG depth files (KITTI devkit encoding).

A stored value ``v`` means ``v / 256`` meters; ``v == 0`` marks a pixel with
no depth.
"""

from __future__ import annotations

import io
import os
import struct
import zlib

import numpy as np
from PIL import Image

from ..core import DepthMap
from ..errors import FormatError

DEPTH_SCALE = 256.0
MAX_STORED = 65535
MAX_ENCODABLE_DEPTH = MAX_STORED / DEPTH_SCALE
MAX_PIXELS = 1 << 26

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_SIXTEEN_BIT_MODES = ("I;16", "I;16L", "I;16B", "I;16N", "I")


def _check_header(data: bytes) -> tuple:
    if len(data) < 33 or data[:8] != _PNG_SIGNATURE:
        raise FormatError("unsupported PNG layout: not a PNG file")
    length, tag = struct.unpack(">I4s", data[8:16])
    if tag != b"IHDR" or length != 13:
        raise FormatError("unsupported PNG layout: missing IHDR")
    body = data[16:29]
    (crc,) = struct.unpack(">I", data[29:33])
    if zlib.crc32(data[12:29]) != crc:
        raise FormatError("corrupt PNG: IHDR checksum mismatch")
    width, height, bit_depth, color_type, _, _, interlace = struct.unpack(">IIBBBBB", body)
    if bit_depth != 16 or color_type != 0:
        raise FormatError(
            f"unsupported PNG layout: bit depth {bit_depth}, color type {color_type} "
            "(need 16-bit single channel)")
    if width == 0 or height == 0 or width * height > MAX_PIXELS:
        raise FormatError(f"unsupported PNG layout: size {width}x{height}")
    return width, height


def _check_chunks(data: bytes) -> None:
    pos = 8
    while pos + 12 <= len(data):
        length, tag = struct.unpack(">I4s", data[pos:pos + 8])
        end = pos + 12 + length
        if end > len(data):
            raise FormatError(f"corrupt PNG: truncated {tag!r} chunk")
        (crc,) = struct.unpack(">I", data[end - 4:end])
        if zlib.crc32(data[pos + 4:end - 4]) != crc:
            raise FormatError(f"corrupt PNG: {tag!r} checksum mismatch")
        if tag == b"IEND":
            return
        pos = end
    raise FormatError("corrupt PNG: missing IEND")


def decode_depth_png(data: bytes) -> DepthMap:
    width, height = _check_header(data)
    _check_chunks(data)
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            mode = im.mode
            stored = np.array(im)
    except Exception as exc:  # Pillow raises many unrelated types on corrupt streams
        raise FormatError(f"corrupt PNG: {exc}") from exc
    if mode not in _SIXTEEN_BIT_MODES or stored.shape != (height, width):
        raise FormatError(f"unsupported PNG layout: decoded mode {mode}")
    if stored.min(initial=0) < 0 or stored.max(initial=0) > MAX_STORED:
        raise FormatError("unsupported PNG layout: values outside 16-bit range")
    stored = stored.astype(np.uint16)
    valid = stored > 0
    return DepthMap(stored / DEPTH_SCALE, valid)


def read_depth_png(path) -> DepthMap:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise FormatError(f"not found: {path}") from None
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_depth_png(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def quantize_depth(depth: DepthMap) -> np.ndarray:
    """Stored uint16 values for a map. Valid depths below 1/256 m are kept as 1."""
    scaled = np.rint(depth.values * DEPTH_SCALE)
    if np.any(depth.valid & (scaled > MAX_STORED)):
        worst = float(depth.values[depth.valid].max())
        raise FormatError(
            f"depth exceeds encodable range: {worst:.3f} m > {MAX_ENCODABLE_DEPTH:.3f} m")
    stored = np.where(depth.valid, np.maximum(scaled, 1), 0)
    return stored.astype(np.uint16)


def encode_depth_png(depth: DepthMap) -> bytes:
    stored = quantize_depth(depth)
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


def write_depth_png(depth: DepthMap, path) -> None:
    data = encode_depth_png(depth)
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
