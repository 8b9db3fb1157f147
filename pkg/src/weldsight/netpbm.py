"""Binary netpbm (P5/P6) readers and writers for 8-bit image artifacts."""

from __future__ import annotations

import numpy as np


class NetpbmError(Exception):
    pass


def _quantize(arr):
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, pixels):
    """Write an [H,W,3] float array in [0,1] as a binary PPM (P6)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise NetpbmError(f"PPM needs an [H,W,3] array, got shape {pixels.shape}")
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(pixels).tobytes())


def write_pgm(path, grid):
    """Write an [H,W] float array in [0,1] as a binary PGM (P5)."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise NetpbmError(f"PGM needs an [H,W] array, got shape {grid.shape}")
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(grid).tobytes())


def _read_header(data, magic):
    if data[:2] != magic:
        raise NetpbmError(f"not a {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def read_ppm(path):
    """Read a binary PPM into an [H,W,3] float array in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, maxval, off = _read_header(data, b"P6")
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 supported, got {maxval}")
    body = data[off:off + h * w * 3]
    if len(body) != h * w * 3:
        raise NetpbmError("truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path):
    """Read a binary PGM into an [H,W] float array in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, maxval, off = _read_header(data, b"P5")
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 supported, got {maxval}")
    body = data[off:off + h * w]
    if len(body) != h * w:
        raise NetpbmError("truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
