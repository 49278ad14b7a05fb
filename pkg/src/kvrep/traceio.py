"""KVTRACE: a bit-exact little-endian binary container for tensors plus metadata.

Byte layout, version 1 (all integers little-endian, payload row-major):

  offset 0   magic, 4 bytes: "KVTR"
  offset 4   version: u32
  offset 8   meta_len: u64
  offset 16  meta: UTF-8 JSON, canonical form (sorted keys, no spaces)
  then       n_tensors: u32
  then, per tensor, in payload order:
             name_len: u16, name: UTF-8 bytes,
             dtype: u8 (0 = f32, 1 = f64),
             ndim: u8, dims: u64 * ndim,
             offset: u64 (relative to payload start)
  then       payload: densely packed tensor bytes

Offsets must be ascending and non-overlapping and the payload must end exactly
at the last tensor's extent. Deterministic input produces deterministic bytes,
so identical traces hash identically. The full layout, with a hex-annotated
example, is documented in docs/kvtrace.md; that document is the wire contract
for foreign writers.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    OverlappingTensorsError,
    TraceFormatError,
    TruncatedTraceError,
)
from .errors import UnsupportedVersionError
from .minitx import ForwardRecord, KVCache

MAGIC = b"KVTR"
VERSION = 1
_DTYPE_CODES = {"f4": 0, "f8": 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class TraceFile:
    """In-memory form of one container: a metadata dict plus named tensors."""

    meta: dict
    tensors: dict = field(default_factory=dict)
    version: int = VERSION


def _canonical_meta(meta: dict) -> bytes:
    try:
        text = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    except (TypeError, ValueError) as exc:
        raise TraceFormatError(f"meta is not JSON-serializable: {exc}") from exc
    return text.encode("utf-8")


def _validated_tensor(name: str, arr) -> np.ndarray:
    if not isinstance(name, str) or not name or len(name.encode("utf-8")) > 0xFFFF:
        raise TraceFormatError(f"bad tensor name {name!r}")
    arr = np.asarray(arr)
    # np.asarray with an explicit order keeps 0-d shapes intact, which
    # ascontiguousarray would silently promote to shape (1,).
    if arr.dtype == np.float32:
        return np.asarray(arr, dtype="<f4", order="C")
    if arr.dtype == np.float64:
        return np.asarray(arr, dtype="<f8", order="C")
    raise TraceFormatError(f"tensor {name!r} has dtype {arr.dtype}; only f32/f64 are storable")


def trace_bytes(trace: TraceFile) -> bytes:
    """Serialize to the wire form (used by write_trace; exposed for hashing)."""
    meta_bytes = _canonical_meta(trace.meta)
    names = list(trace.tensors)
    if len(set(names)) != len(names):
        raise TraceFormatError("tensor names must be unique")
    arrays = [_validated_tensor(n, trace.tensors[n]) for n in names]
    directory = bytearray()
    directory += struct.pack("<I", len(names))
    offset = 0
    for name, arr in zip(names, arrays):
        raw_name = name.encode("utf-8")
        code = _DTYPE_CODES[arr.dtype.str[1:]]
        directory += struct.pack("<H", len(raw_name)) + raw_name
        directory += struct.pack("<BB", code, arr.ndim)
        directory += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        directory += struct.pack("<Q", offset)
        offset += arr.nbytes
    head = MAGIC + struct.pack("<I", trace.version) + struct.pack("<Q", len(meta_bytes))
    payload = b"".join(arr.tobytes(order="C") for arr in arrays)
    return head + meta_bytes + bytes(directory) + payload


def write_trace(path, trace: TraceFile) -> None:
    """Validate, then write atomically (temp file + rename); no partial files."""
    data = trace_bytes(trace)  # raises before anything touches disk
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedTraceError(f"file ends inside {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def read_trace(path) -> TraceFile:
    """Parse and fully validate a container; raises a distinct error per defect class."""
    with open(os.fspath(path), "rb") as fh:
        data = fh.read()
    return parse_trace(data)


def parse_trace(data: bytes) -> TraceFile:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    r.pos = 4
    version = r.u("<I", "version")
    if version > VERSION:
        raise UnsupportedVersionError(f"container version {version} > supported {VERSION}")
    meta_len = r.u("<Q", "meta length")
    meta_raw = r.take(meta_len, "metadata")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"metadata is not valid UTF-8 JSON: {exc}") from exc
    n_tensors = r.u("<I", "tensor count")
    entries = []
    for i in range(n_tensors):
        name_len = r.u("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8", errors="strict")
        code = r.u("<B", f"tensor {name!r} dtype")
        if code not in _CODE_DTYPES:
            raise TraceFormatError(f"tensor {name!r} has unknown dtype code {code}")
        ndim = r.u("<B", f"tensor {name!r} ndim")
        dims = tuple(r.u("<Q", f"tensor {name!r} dims") for _ in range(ndim))
        offset = r.u("<Q", f"tensor {name!r} offset")
        entries.append((name, _CODE_DTYPES[code], dims, offset))
    if len({e[0] for e in entries}) != len(entries):
        raise TraceFormatError("duplicate tensor names in directory")

    payload = data[r.pos :]
    expected_end = 0
    tensors: dict = {}
    prev_name = None
    for name, dtype, dims, offset in entries:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = count * dtype.itemsize
        if offset < expected_end:
            raise OverlappingTensorsError(
                f"tensor {name!r} at offset {offset} overlaps {prev_name!r} ending at {expected_end}"
            )
        if offset > expected_end:
            raise TraceFormatError(
                f"tensor {name!r} at offset {offset} leaves a gap after {expected_end}; payload must be dense"
            )
        if offset + nbytes > len(payload):
            raise TruncatedTraceError(
                f"tensor {name!r} needs bytes [{offset}, {offset + nbytes}) but payload has {len(payload)}"
            )
        flat = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        tensors[name] = flat.reshape(dims).copy()
        expected_end = offset + nbytes
        prev_name = name
    if len(payload) != expected_end:
        raise TraceFormatError(
            f"payload has {len(payload) - expected_end} trailing bytes past the last tensor"
        )
    return TraceFile(meta=meta, tensors=tensors, version=version)


def validate_trace(trace: TraceFile) -> list:
    """Report-based semantic validation of an in-memory trace.

    Checks finiteness of every tensor and, when the metadata declares model
    dimensions, the conventional cache/hidden tensor shapes. Returns a list of
    violation strings; empty means clean.
    """
    report: list = []
    for name, arr in trace.tensors.items():
        finite = np.isfinite(arr)
        if not finite.all():
            idx = int(np.flatnonzero(~finite.ravel())[0])
            report.append(f"{name}: non-finite value at flat index {idx}")
    model = trace.meta.get("model") if isinstance(trace.meta, dict) else None
    if isinstance(model, dict):
        report.extend(_check_model_shapes(trace, model))
    return report


def _check_model_shapes(trace: TraceFile, model: dict) -> list:
    report = []
    num_layers = model.get("num_layers")
    h_kv = model.get("num_kv_heads")
    d_head = model.get("d_head")
    d_model = model.get("d_model")
    token_ids = trace.meta.get("token_ids")
    t = len(token_ids) if isinstance(token_ids, list) else None
    if isinstance(num_layers, int) and all(isinstance(x, int) for x in (h_kv, d_head) if x is not None):
        lens = set()
        for l in range(num_layers):
            for prefix in ("K", "V"):
                name = f"{prefix}.{l}"
                arr = trace.tensors.get(name)
                if arr is None:
                    continue
                if arr.ndim != 3:
                    report.append(f"{name}: expected rank 3 [t, H_kv, d_head], got shape {arr.shape}")
                    continue
                if h_kv is not None and arr.shape[1] != h_kv:
                    report.append(f"{name}: H_kv {arr.shape[1]} != declared {h_kv}")
                if d_head is not None and arr.shape[2] != d_head:
                    report.append(f"{name}: d_head {arr.shape[2]} != declared {d_head}")
                lens.add(arr.shape[0])
        if len(lens) > 1:
            report.append(f"cache tensors disagree on token count: {sorted(lens)}")
        elif len(lens) == 1 and t is not None and lens != {t}:
            report.append(f"cache token count {lens.pop()} != len(token_ids) {t}")
    hidden = trace.tensors.get("hidden")
    if hidden is not None and isinstance(num_layers, int):
        if hidden.ndim != 3 or hidden.shape[0] != num_layers + 1:
            report.append(
                f"hidden: expected [{num_layers + 1}, t, d_model], got shape {hidden.shape}"
            )
        elif d_model is not None and hidden.shape[2] != d_model:
            report.append(f"hidden: d_model {hidden.shape[2]} != declared {d_model}")
    return report


def cache_to_trace(cache: KVCache, meta: dict | None = None, extra_tensors: dict | None = None) -> TraceFile:
    """Pack a cache as K.l / V.l tensors with model dims recorded in metadata."""
    full_meta = {
        "kind": "kv-cache",
        "model": {
            "num_layers": cache.num_layers,
            "num_kv_heads": cache.num_kv_heads,
            "d_head": cache.d_head,
        },
        "current_len": cache.current_len,
    }
    if meta:
        full_meta.update(meta)
    tensors: dict = {}
    for l in range(cache.num_layers):
        tensors[f"K.{l}"] = np.asarray(cache.keys(l))
        tensors[f"V.{l}"] = np.asarray(cache.values(l))
    if extra_tensors:
        tensors.update(extra_tensors)
    return TraceFile(meta=full_meta, tensors=tensors)


def cache_from_trace(trace: TraceFile) -> KVCache:
    """Rebuild a KVCache from K.l / V.l tensors (layer indices must be dense from 0)."""
    layers = sorted(
        int(name.split(".", 1)[1]) for name in trace.tensors if name.startswith("K.")
    )
    if not layers or layers != list(range(len(layers))):
        raise TraceFormatError(f"trace lacks dense K.0..K.L-1 tensors, found layers {layers}")
    keys, values = [], []
    for l in layers:
        if f"V.{l}" not in trace.tensors:
            raise TraceFormatError(f"trace has K.{l} but no V.{l}")
        keys.append(np.asarray(trace.tensors[f"K.{l}"], dtype=np.float32))
        values.append(np.asarray(trace.tensors[f"V.{l}"], dtype=np.float32))
    return KVCache.from_arrays(keys, values)


def record_to_tensors(record: ForwardRecord) -> dict:
    return {
        "logits": record.logits,
        "hidden": record.hidden_states,
        "token_logprobs": record.token_logprobs,
    }


def record_from_trace(trace: TraceFile) -> ForwardRecord:
    missing = [n for n in ("logits", "hidden", "token_logprobs") if n not in trace.tensors]
    if missing:
        raise TraceFormatError(f"trace lacks forward-record tensors: {missing}")
    return ForwardRecord(
        logits=np.asarray(trace.tensors["logits"], dtype=np.float32),
        hidden_states=np.asarray(trace.tensors["hidden"], dtype=np.float32),
        token_logprobs=np.asarray(trace.tensors["token_logprobs"], dtype=np.float64),
    )
