"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only.

Float images are H x W x 3 arrays in [0, 1]; they are quantized with
round-to-nearest on write, so a re-read differs by at most 1/510 per channel.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


class PnmError(ValueError):
    """Malformed or unsupported PNM file."""


def _read_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, payload_offset)."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise PnmError(f"{path}: truncated header")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
        if len(tokens) == 1 and tokens[0] not in (b"P5", b"P6"):
            raise PnmError(f"{path}: not a binary PGM/PPM file (magic {tokens[0][:8]!r})")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError(f"{path}: non-numeric header field") from None
    if width <= 0 or height <= 0:
        raise PnmError(f"{path}: bad dimensions {width}x{height}")
    return tokens[0], width, height, maxval, pos


def _read(path, expected_magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, width, height, maxval, offset = _read_header(data, path)
    if magic != expected_magic:
        kind = "PGM (P5)" if expected_magic == b"P5" else "PPM (P6)"
        raise PnmError(f"{path}: expected binary {kind}, found {magic.decode()}")
    if maxval > 255:
        raise PnmError(f"{path}: 16-bit maxval {maxval} is not supported, only 8-bit")
    if maxval <= 0:
        raise PnmError(f"{path}: bad maxval {maxval}")
    size = width * height * channels
    raster = data[offset : offset + size]
    if len(raster) != size:
        raise PnmError(f"{path}: truncated raster ({len(raster)} of {size} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return arr.reshape(shape), maxval


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def quantize(image: np.ndarray) -> np.ndarray:
    """Float [0, 1] -> uint8 with round-to-nearest (half away from zero)."""
    scaled = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def read_ppm(path) -> np.ndarray:
    """Read a P6 file as a float32 H x W x 3 image in [0, 1]."""
    raw, maxval = _read(path, b"P6", 3)
    return (raw.astype(np.float32) / np.float32(maxval)).astype(np.float32)


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
    h, w, _ = image.shape
    _atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + quantize(image).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 file as a uint8 H x W array (values rescaled to 0..255)."""
    raw, maxval = _read(path, b"P5", 1)
    if maxval == 255:
        return raw.copy()
    return np.floor(raw.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    """Write a uint8 (or bool, stored as 0/255) H x W array as P5."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"expected an H x W array, got shape {gray.shape}")
    if gray.dtype == bool:
        gray = gray.astype(np.uint8) * 255
    h, w = gray.shape
    _atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + gray.astype(np.uint8).tobytes())
