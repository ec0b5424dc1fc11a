"""Weight archive and manifest persistence.

Archive layout ("PRUNEKT1"):
    magic            8 bytes  b"PRUNEKT1"
    entry count      u32 LE
    per entry:
        name length  u32 LE
        name         UTF-8 bytes
        rank         u32 LE
        dims         rank * u32 LE
        offset       u64 LE, into the data region
    data region      raw little-endian float32, contiguous

Entries are sorted by name and written with strictly increasing,
non-overlapping offsets, so identical stores produce byte-identical files.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Any

import numpy as np

from .errors import FormatError, ValidationError
from .graph import ModelGraph
from .tensors import DTYPE

MAGIC = b"PRUNEKT1"

WeightStore = dict[str, np.ndarray]


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_archive(store: WeightStore, path: str) -> None:
    """Serialize a weight store. Entries sorted by name; deterministic bytes."""
    if not store:
        raise ValidationError("refusing to write an empty archive")
    names = sorted(store)
    header = bytearray(MAGIC)
    header += struct.pack("<I", len(names))
    offset = 0
    blobs = []
    for name in names:
        t = np.ascontiguousarray(store[name], dtype=DTYPE)
        nb = name.encode("utf-8")
        header += struct.pack("<I", len(nb))
        header += nb
        header += struct.pack("<I", t.ndim)
        header += struct.pack(f"<{t.ndim}I", *t.shape)
        header += struct.pack("<Q", offset)
        blob = t.tobytes()
        blobs.append(blob)
        offset += len(blob)
    _atomic_write(path, bytes(header) + b"".join(blobs))


def load_archive(path: str) -> WeightStore:
    """Parse an archive back into memory-resident float32 arrays."""
    with open(path, "rb") as f:
        raw = f.read()

    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(
                f"{path}: truncated reading {what} at byte {pos} "
                f"(need {n}, have {len(raw) - pos})")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(8, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0, expected {MAGIC!r}")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries: list[tuple[str, tuple[int, ...], int]] = []
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        name = take(nlen, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"entry {i} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"entry {i} dims"))
        (off,) = struct.unpack("<Q", take(8, f"entry {i} offset"))
        entries.append((name, dims, off))
    data_start = pos
    data_len = len(raw) - data_start
    expected = 0
    prev_end = 0
    for name, dims, off in entries:
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if off < prev_end:
            raise FormatError(
                f"{path}: entry {name!r} offset {off} overlaps previous entry "
                f"ending at {prev_end} (data byte {data_start + off})")
        prev_end = off + nbytes
        expected += nbytes
    if expected != data_len:
        raise FormatError(
            f"{path}: data region is {data_len} bytes at byte {data_start}, "
            f"header requires {expected}")
    store: WeightStore = {}
    for name, dims, off in entries:
        if name in store:
            raise FormatError(f"{path}: duplicate entry name {name!r}")
        n = int(np.prod(dims, dtype=np.int64))
        start = data_start + off
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=start)
        store[name] = arr.astype(DTYPE).reshape(dims)
    return store


def check_store(graph: ModelGraph, store: WeightStore) -> None:
    """Verify every manifest-referenced tensor exists with the declared dims."""
    for nid, n in graph.nodes.items():
        refs: list[tuple[str, tuple[int, ...]]] = []
        if n.kind == "conv":
            refs.append((n.weight, (n.out_channels, n.in_channels, n.kernel, n.kernel)))
            if n.bias is not None:
                refs.append((n.bias, (n.out_channels,)))
        elif n.kind == "fc":
            refs.append((n.weight, (n.out_features, n.in_features)))
            if n.bias is not None:
                refs.append((n.bias, (n.out_features,)))
        elif n.kind == "bn":
            for ref in (n.gamma, n.beta, n.mean, n.var):
                refs.append((ref, (n.channels,)))
        for name, dims in refs:
            if name not in store:
                raise ValidationError(f"node {nid!r}: tensor {name!r} missing from store")
            got = store[name].shape
            if tuple(got) != dims:
                raise ValidationError(
                    f"node {nid!r}: tensor {name!r} has dims {tuple(got)}, "
                    f"manifest declares {dims}")


def load_manifest(path: str) -> ModelGraph:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}")
    try:
        return ModelGraph.from_dict(d)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}")


def save_manifest(graph: ModelGraph, path: str) -> None:
    payload = json.dumps(graph.to_dict(), indent=2, sort_keys=True) + "\n"
    _atomic_write(path, payload.encode("utf-8"))


def manifest_json(graph: ModelGraph) -> str:
    return json.dumps(graph.to_dict(), indent=2, sort_keys=True) + "\n"


def write_json(payload: Any, path: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    _atomic_write(path, text.encode("utf-8"))
