"""Binary PGM (P5) and PPM (P6) reading and writing.

Both formats are a whitespace-delimited ASCII header (magic, width,
height, maxval, with ``#`` comments allowed) followed by raw bytes.
Only maxval 255 is supported; that keeps round trips bit-exact with
uint8 arrays.
"""

from __future__ import annotations

import numpy as np


def _read_header_tokens(data, path, count):
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated header")
        ch = data[pos:pos + 1]
        if ch in b" \t\r\n":
            pos += 1
            continue
        if ch == b"#":
            nl = data.find(b"\n", pos)
            if nl == -1:
                raise ValueError(f"{path}: unterminated comment in header")
            pos = nl + 1
            continue
        end = pos
        while end < len(data) and data[end:end + 1] not in b" \t\r\n":
            end += 1
        tokens.append(data[pos:end])
        pos = end
    # One single whitespace byte separates the header from the raster.
    if pos >= len(data):
        raise ValueError(f"{path}: missing raster data")
    return tokens, pos + 1


def read_pnm(path):
    """Read a P5 or P6 file into a uint8 array: (H, W) gray or (H, W, 3) rgb."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2 or data[:1] != b"P":
        raise ValueError(f"{path}: not a PNM file")
    tokens, offset = _read_header_tokens(data, path, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported magic {magic!r} (want P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ValueError(f"{path}: malformed header fields {tokens[1:4]}") from None
    if width <= 0 or height <= 0:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval} (want 255)")
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    raster = data[offset:]
    if len(raster) != expected:
        raise ValueError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def write_pgm(path, gray):
    """Write a (H, W) uint8 array as binary PGM."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-D array, got shape {gray.shape}")
    gray = gray.astype(np.uint8)
    h, w = gray.shape
    with open(str(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_ppm(path, rgb):
    """Write a (H, W, 3) uint8 array as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"write_ppm expects a (H, W, 3) array, got shape {rgb.shape}")
    rgb = rgb.astype(np.uint8)
    h, w, _ = rgb.shape
    with open(str(path), "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
