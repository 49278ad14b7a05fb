"""Standalone KVTRACE v1 writer and reader.

This module is written against the wire contract in docs/kvtrace.md and on
purpose shares no code with the core toolkit: the container format is the
only interface between the two packages, so a second implementation keeps
that boundary honest. Writers must be canonical (sorted JSON keys, dense
ascending payload) so that equal traces are equal bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"KVTR"
VERSION = 1
_F32 = 0
_F64 = 1
_CODE_TO_DTYPE = {_F32: np.dtype("<f4"), _F64: np.dtype("<f8")}


class WireFormatError(Exception):
    """Raised when bytes (or tensors about to become bytes) violate the contract."""


def canonical_meta(meta) -> bytes:
    try:
        text = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    except (TypeError, ValueError) as exc:
        raise WireFormatError(f"metadata is not JSON-serializable: {exc}") from exc
    return text.encode("utf-8")


def _storable(name, arr) -> np.ndarray:
    if not isinstance(name, str) or not name or len(name.encode("utf-8")) > 0xFFFF:
        raise WireFormatError(f"bad tensor name {name!r}")
    arr = np.asarray(arr)
    # order="C" rather than ascontiguousarray so 0-d tensors keep their shape.
    if arr.dtype == np.float32:
        return np.asarray(arr, dtype="<f4", order="C")
    if arr.dtype == np.float64:
        return np.asarray(arr, dtype="<f8", order="C")
    raise WireFormatError(f"tensor {name!r} has dtype {arr.dtype}; only f32/f64 are storable")


def serialize_trace(meta, tensors) -> bytes:
    """Build the full container byte string for one trace."""
    head = bytearray()
    head += MAGIC
    head += struct.pack("<I", VERSION)
    meta_bytes = canonical_meta(meta)
    head += struct.pack("<Q", len(meta_bytes))
    head += meta_bytes
    head += struct.pack("<I", len(tensors))
    payload = bytearray()
    for name, raw in tensors.items():
        arr = _storable(name, raw)
        encoded = name.encode("utf-8")
        head += struct.pack("<H", len(encoded))
        head += encoded
        code = _F32 if arr.dtype == np.dtype("<f4") else _F64
        head += struct.pack("<BB", code, arr.ndim)
        for dim in arr.shape:
            head += struct.pack("<Q", dim)
        head += struct.pack("<Q", len(payload))
        payload += arr.tobytes()
    return bytes(head + payload)


def write_trace_file(path, meta, tensors) -> None:
    """Serialize and write atomically: temp file in place, then rename."""
    data = serialize_trace(meta, tensors)
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise WireFormatError(f"file ends inside {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]


def parse_trace_bytes(data: bytes):
    """Validate a container fully and return (meta, tensors).

    Every defect in docs/kvtrace.md's rejection table raises WireFormatError;
    the core toolkit's reader distinguishes defect classes, this one only
    needs to refuse them.
    """
    cur = _Cursor(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise WireFormatError(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    cur.pos = 4
    version = cur.unpack("<I", "version")
    if version > VERSION:
        raise WireFormatError(f"container version {version} > supported {VERSION}")
    meta_len = cur.unpack("<Q", "meta length")
    try:
        meta = json.loads(cur.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireFormatError(f"metadata is not valid UTF-8 JSON: {exc}") from exc
    n_tensors = cur.unpack("<I", "tensor count")
    entries = []
    for i in range(n_tensors):
        name_len = cur.unpack("<H", f"tensor {i} name length")
        name = cur.take(name_len, f"tensor {i} name").decode("utf-8")
        code = cur.unpack("<B", f"tensor {name!r} dtype")
        if code not in _CODE_TO_DTYPE:
            raise WireFormatError(f"tensor {name!r} has unknown dtype code {code}")
        ndim = cur.unpack("<B", f"tensor {name!r} ndim")
        dims = tuple(cur.unpack("<Q", f"tensor {name!r} dims") for _ in range(ndim))
        offset = cur.unpack("<Q", f"tensor {name!r} offset")
        entries.append((name, _CODE_TO_DTYPE[code], dims, offset))
    if len({e[0] for e in entries}) != len(entries):
        raise WireFormatError("duplicate tensor names in directory")

    payload = data[cur.pos :]
    tensors = {}
    end = 0
    for name, dtype, dims, offset in entries:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = count * dtype.itemsize
        if offset != end:
            raise WireFormatError(
                f"tensor {name!r} at offset {offset} must start at {end}; payload is dense"
            )
        if offset + nbytes > len(payload):
            raise WireFormatError(
                f"tensor {name!r} needs bytes [{offset}, {offset + nbytes}) but payload has {len(payload)}"
            )
        flat = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        tensors[name] = flat.reshape(dims).copy()
        end = offset + nbytes
    if len(payload) != end:
        raise WireFormatError(f"payload has {len(payload) - end} trailing bytes past the last tensor")
    return meta, tensors


def read_trace_file(path):
    with open(os.fspath(path), "rb") as fh:
        return parse_trace_bytes(fh.read())
