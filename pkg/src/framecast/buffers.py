"""Bit-exact binary container for image buffers, plus PNG export.

File layout (all integers little-endian):

    bytes 0..7    magic b"GFFEBUF1"
    bytes 8..11   width   (uint32)
    bytes 12..15  height  (uint32)
    bytes 16..19  channels (uint32)
    bytes 20..23  dtype code (uint32; 0 = 32-bit float)
    bytes 24..31  reserved, must be zero
    bytes 32..    payload: row-major, top-left origin, channel-interleaved

Values must be finite, except depth buffers may carry +inf for "no
fragment". Round-tripping a buffer through write/read is bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BufferFormatError

MAGIC = b"GFFEBUF1"
DTYPE_F32 = 0
HEADER_SIZE = 32
_HEADER = struct.Struct("<8s4I8s")


def _normalize(buffer: np.ndarray) -> np.ndarray:
    buf = np.asarray(buffer, dtype=np.float32)
    if buf.ndim == 2:
        buf = buf[:, :, None]
    if buf.ndim != 3:
        raise ValueError(f"buffer must be HxW or HxWxC, got shape {buf.shape}")
    return buf


def write_buffer(buffer: np.ndarray, path) -> None:
    """Write a float32 buffer; NaN or -inf anywhere is rejected."""
    buf = _normalize(buffer)
    if np.any(np.isnan(buf)) or np.any(np.isneginf(buf)):
        raise ValueError("buffer values must be finite or +inf")
    h, w, c = buf.shape
    header = _HEADER.pack(MAGIC, w, h, c, DTYPE_F32, b"\x00" * 8)
    payload = np.ascontiguousarray(buf).astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def read_buffer(path) -> np.ndarray:
    """Read a buffer written by :func:`write_buffer`; returns (H, W, C) float32."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise BufferFormatError(f"{path}: header truncated to {len(raw)} bytes (field: header)")
    magic, w, h, c, dtype, reserved = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BufferFormatError(f"{path}: bad magic {magic!r} (field: magic)")
    if dtype != DTYPE_F32:
        raise BufferFormatError(f"{path}: unsupported dtype code {dtype} (field: dtype)")
    if reserved != b"\x00" * 8:
        raise BufferFormatError(f"{path}: reserved bytes not zero (field: reserved)")
    if w < 1 or h < 1 or c < 1:
        raise BufferFormatError(f"{path}: bad dimensions {w}x{h}x{c} (field: width/height/channels)")
    expected = w * h * c * 4
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise BufferFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} (field: payload)")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float32, copy=True)


def export_png(color: np.ndarray, path, gamma: float = 2.2) -> None:
    """Write a 3-channel linear-RGB buffer as an 8-bit gamma-encoded PNG.

    Value mapping: round(255 * clamp(v, 0, 1) ** (1 / gamma)).
    """
    from PIL import Image

    buf = np.asarray(color, dtype=np.float64)
    if buf.ndim != 3 or buf.shape[2] != 3:
        raise ValueError(f"export_png needs a 3-channel buffer, got shape {buf.shape}")
    encoded = np.clip(buf, 0.0, 1.0) ** (1.0 / gamma)
    img = np.rint(255.0 * encoded).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(Path(path), format="PNG")


def gray_to_rgb(mask: np.ndarray) -> np.ndarray:
    """Stack a single-channel mask to 3 channels for PNG export."""
    m = np.asarray(mask, dtype=np.float32)
    if m.ndim == 3:
        m = m[:, :, 0]
    return np.repeat(m[:, :, None], 3, axis=2)
