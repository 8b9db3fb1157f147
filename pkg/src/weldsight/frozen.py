"""Self-describing binary container for inference-only model payloads.

Layout: magic (4 bytes) | version (u16 LE) | metadata block (u32 length +
UTF-8 JSON) | tensor count (u32) | per tensor: name (u16 length + UTF-8),
dtype tag (u8), rank (u8), extents (u32 each), raw little-endian values |
SHA-256 of everything before it. Load errors are typed and nothing is
constructed until the whole file has validated.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

FORMAT_VERSION = 1
MODEL_MAGIC = b"WSFM"
CLASSIFIER_MAGIC = b"WSCL"

_DTYPES = {0: "<f8", 1: "<i8"}
_DTYPE_TAGS = {"float64": 0, "int64": 1}


class FrozenFormatError(Exception):
    """Base class for container read failures."""


class BadMagicError(FrozenFormatError):
    pass


class VersionMismatchError(FrozenFormatError):
    pass


class TruncatedFileError(FrozenFormatError):
    pass


class ChecksumError(FrozenFormatError):
    pass


def write_container(path, magic, metadata, tensors):
    """Serialize `metadata` (JSON-able dict) and named arrays to `path`."""
    parts = [magic, struct.pack("<H", FORMAT_VERSION)]
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPE_TAGS:
            arr = arr.astype(np.float64)
        tag = _DTYPE_TAGS[arr.dtype.name]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


class _Cursor:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path, magic):
    """Parse and validate a container; returns (metadata, tensors).

    Structural bounds are checked while parsing (bad lengths and short
    files raise TruncatedFileError), the trailing digest is verified last,
    and only then are arrays materialized.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    got_magic = cur.take(4)
    if got_magic != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {got_magic!r}")
    (version,) = cur.unpack("<H")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {FORMAT_VERSION}")
    (meta_len,) = cur.unpack("<I")
    meta_raw = cur.take(meta_len)
    (count,) = cur.unpack("<I")
    specs = []
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        tag, ndim = cur.unpack("<BB")
        if tag not in _DTYPES:
            raise FrozenFormatError(f"unknown dtype tag {tag}")
        shape = cur.unpack(f"<{ndim}I")
        n_items = 1
        for s in shape:
            n_items *= s
        raw = cur.take(n_items * 8)
        specs.append((name, tag, shape, raw))
    digest = cur.take(32)
    if cur.pos != len(data):
        raise TruncatedFileError(f"{len(data) - cur.pos} trailing bytes after checksum")
    if hashlib.sha256(data[:-32]).digest() != digest:
        raise ChecksumError("SHA-256 digest does not match file contents")
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrozenFormatError(f"metadata block is not valid JSON: {exc}") from exc
    tensors = {
        name: np.frombuffer(raw, dtype=_DTYPES[tag]).reshape(shape).copy()
        for name, tag, shape, raw in specs
    }
    return metadata, tensors
