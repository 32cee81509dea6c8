"""
Binary PPM (P6) frames and PGM (P5) masks, 8-bit only.

Reading maps bytes v to v / 255. Writing quantizes with round-half-up,
floor(x * 255 + 0.5), so read -> write reproduces a canonically written file
(`P6\\n<w> <h>\\n255\\n` + payload) byte for byte.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from app.core.errors import DimensionError, FrameFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_WHITESPACE = b" \t\n\r\v\f"
_HASH = ord("#")


def _read_token(buf: bytes, pos: int, path: str) -> Tuple[bytes, int]:
    """Skip whitespace and '#' comments, then return the next token and the position after it."""
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == _HASH:
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != _HASH:
        pos += 1
    if start == pos:
        raise FrameFormatError("unexpected end of header", pos, path)
    return buf[start:pos], pos


def _parse_int(token: bytes, offset: int, what: str, path: str) -> int:
    if not token.isdigit():
        raise FrameFormatError(f"{what} is not a decimal integer: {token[:16]!r}", offset, path)
    return int(token)


def decode_netpbm(buf: bytes, path: str = "<bytes>") -> np.ndarray:
    """Parse P6/P5 bytes into a (C, H, W) uint8 array."""
    if len(buf) < 2:
        raise FrameFormatError("file too short for a magic number", len(buf), path)
    magic = buf[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise FrameFormatError(f"unsupported magic {magic!r}, expected P6 or P5", 0, path)
    pos = 2
    if len(buf) > pos and buf[pos] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        raise FrameFormatError("missing whitespace after magic number", pos, path)

    values = []
    for what in ("width", "height", "maxval"):
        token_start = pos
        token, pos = _read_token(buf, pos, path)
        values.append(_parse_int(token, token_start, what, path))
    width, height, maxval = values
    if width == 0 or height == 0:
        raise FrameFormatError(f"empty image {width}x{height}", pos, path)
    if maxval != 255:
        raise FrameFormatError(f"only 8-bit files are supported (maxval {maxval})", pos, path)
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise FrameFormatError("missing whitespace before pixel data", pos, path)
    pos += 1

    expected = width * height * channels
    payload = buf[pos:pos + expected]
    if len(payload) < expected:
        raise FrameFormatError(f"truncated payload: {len(payload)} of {expected} bytes", pos + len(payload), path)
    if len(buf) > pos + expected:
        logger.debug("%s: ignoring %d trailing bytes", path, len(buf) - pos - expected)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def encode_netpbm(pixels: np.ndarray) -> bytes:
    """(C, H, W) uint8 with C in {1, 3} -> canonical P5/P6 bytes."""
    channels, height, width = pixels.shape
    magic = {3: b"P6", 1: b"P5"}.get(channels)
    if magic is None:
        raise DimensionError("encode_netpbm", "channel", "1 or 3", channels)
    header = magic + b"\n" + f"{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes()


def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 with round-half-up."""
    return np.clip(np.floor(values.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def dequantize(pixels: np.ndarray) -> np.ndarray:
    return (pixels.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def read_frame(path: PathLike) -> np.ndarray:
    """PPM file -> (3, H, W) float32 in [0, 1]."""
    path = Path(path)
    pixels = decode_netpbm(path.read_bytes(), str(path))
    if pixels.shape[0] != 3:
        raise FrameFormatError("expected a P6 colour frame, found P5", 0, str(path))
    return dequantize(pixels)


def write_frame(frame: np.ndarray, path: PathLike) -> None:
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DimensionError("write_frame", "channel", 3, frame.shape[0] if frame.ndim == 3 else frame.shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_netpbm(quantize(frame)))


def read_mask(path: PathLike) -> np.ndarray:
    """PGM file -> (1, H, W) float32; 255 maps to 1."""
    path = Path(path)
    pixels = decode_netpbm(path.read_bytes(), str(path))
    if pixels.shape[0] != 1:
        raise FrameFormatError("expected a P5 mask, found P6", 0, str(path))
    return dequantize(pixels)


def write_mask(mask: np.ndarray, path: PathLike) -> None:
    if mask.ndim != 3 or mask.shape[0] != 1:
        raise DimensionError("write_mask", "channel", 1, mask.shape[0] if mask.ndim == 3 else mask.shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_netpbm(quantize(mask)))
