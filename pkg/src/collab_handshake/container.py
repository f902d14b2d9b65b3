"""Versioned binary container for named float64 tensors.

Layout (all integers little-endian)::

    magic        8 bytes
    version      u32
    header       u32 length + UTF-8 JSON (sorted keys)
    count        u32
    count x      u32 name length, name, u32 rank, rank x u64 extents,
                 prod(extents) x f64 values

Checkpoints and exported episode sets both use it, with different magics.
"""
from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from .errors import FormatError, TruncatedError, VersionError

CHECKPOINT_MAGIC = b"CHSKCKPT"
EPISODES_MAGIC = b"CHSKEPIS"


def encode_container(magic, version, header, tensors):
    buf = io.BytesIO()
    buf.write(magic)
    buf.write(struct.pack("<I", version))
    blob = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"container truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_container(data, magic, version):
    """Returns ``(header, tensors)`` with tensors as an ordered name -> array dict."""
    r = _Reader(data)
    got = r.take(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (found,) = r.unpack("<I")
    if found != version:
        raise VersionError(f"container version {found} not readable (this reader supports {version})")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<I")
        if rank > 8:
            raise FormatError(f"tensor {name!r} has implausible rank {rank}")
        shape = r.unpack(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return header, tensors


def write_file(path, payload):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)


def read_file(path):
    with open(path, "rb") as fh:
        return fh.read()
