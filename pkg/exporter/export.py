#!/usr/bin/env python3
"""Convert PyTorch checkpoints into .pkt weight archives plus manifests.

Usage:
    export.py --arch {vgg16_cifar,resnet56,googlenet_cifar,resnet50} \
              --ckpt PATH --out DIR

The archive format ("PRUNEKT1") is written from scratch here; the pruning
toolkit is never imported. Layout:

    magic            8 bytes  b"PRUNEKT1"
    entry count      u32 LE
    per entry:
        name length  u32 LE
        name         UTF-8 bytes
        rank         u32 LE
        dims         rank * u32 LE
        offset       u64 LE, into the data region
    data region      raw little-endian float32, contiguous

Entries are sorted by name with contiguous offsets, so a fixed checkpoint
always produces identical bytes. The manifest written next to the archive
is a verbatim copy of the bundled template for the architecture.

Exit codes: 0 success, 1 mapping/io failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import tempfile

import numpy as np

MAGIC = b"PRUNEKT1"
ARCHITECTURES = ("vgg16_cifar", "resnet56", "googlenet_cifar", "resnet50")
TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                            "manifests")
# checkpoint keys that carry no weights
SKIP_SUFFIXES = ("num_batches_tracked",)
# wrapper keys some training scripts nest the state dict under
WRAPPER_KEYS = ("state_dict", "net", "model")


class MappingError(Exception):
    """Checkpoint does not line up with the architecture template."""


def template_path(arch: str) -> str:
    return os.path.join(TEMPLATE_DIR, f"{arch}.model.json")


def build_mapping(manifest: dict) -> dict[str, tuple[str, tuple[int, ...]]]:
    """Checkpoint parameter name -> (archive tensor name, expected dims).

    Derived from the manifest template, so it is total over the manifest's
    weight references by construction. Batchnorm statistics map from torch
    naming (weight/bias/running_mean/running_var) to gamma/beta/mean/var.
    """
    mapping: dict[str, tuple[str, tuple[int, ...]]] = {}
    for nd in manifest["nodes"]:
        nid = nd["id"]
        kind = nd["kind"]
        if kind == "conv":
            dims = (nd["out_channels"], nd["in_channels"],
                    nd["kernel"], nd["kernel"])
            mapping[f"{nid}.weight"] = (nd["weight"], dims)
            if nd.get("bias"):
                mapping[f"{nid}.bias"] = (nd["bias"], (nd["out_channels"],))
        elif kind == "fc":
            dims = (nd["out_features"], nd["in_features"])
            mapping[f"{nid}.weight"] = (nd["weight"], dims)
            if nd.get("bias"):
                mapping[f"{nid}.bias"] = (nd["bias"], (nd["out_features"],))
        elif kind == "bn":
            c = (nd["channels"],)
            mapping[f"{nid}.weight"] = (nd["gamma"], c)
            mapping[f"{nid}.bias"] = (nd["beta"], c)
            mapping[f"{nid}.running_mean"] = (nd["mean"], c)
            mapping[f"{nid}.running_var"] = (nd["var"], c)
    return mapping


def normalize_state_dict(obj) -> dict:
    """Unwrap checkpoint containers and strip DataParallel prefixes."""
    for key in WRAPPER_KEYS:
        if isinstance(obj, dict) and isinstance(obj.get(key), dict):
            obj = obj[key]
    if not isinstance(obj, dict):
        raise MappingError(f"checkpoint is a {type(obj).__name__}, "
                           f"expected a state dict")
    out = {}
    for k, v in obj.items():
        if k.startswith("module."):
            k = k[len("module."):]
        if k.endswith(SKIP_SUFFIXES):
            continue
        out[k] = v
    return out


def write_archive(store: dict[str, np.ndarray], path: str) -> None:
    names = sorted(store)
    header = bytearray(MAGIC)
    header += struct.pack("<I", len(names))
    offset = 0
    blobs = []
    for name in names:
        t = np.ascontiguousarray(store[name], dtype=np.float32)
        nb = name.encode("utf-8")
        header += struct.pack("<I", len(nb))
        header += nb
        header += struct.pack("<I", t.ndim)
        header += struct.pack(f"<{t.ndim}I", *t.shape)
        header += struct.pack("<Q", offset)
        blob = t.tobytes()
        blobs.append(blob)
        offset += len(blob)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(bytes(header) + b"".join(blobs))
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_archive(path: str) -> dict[str, np.ndarray]:
    """Minimal reader, used to check round-trips."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise MappingError(f"{path}: bad magic")
    pos = 8
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        (off,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        entries.append((name, dims, off))
    store = {}
    for name, dims, off in entries:
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos + off)
        store[name] = arr.reshape(dims).copy()
    return store


def export(ckpt_path: str, arch: str, out_dir: str) -> tuple[str, str]:
    """Returns (archive path, manifest path). Raises MappingError on mismatch."""
    import torch

    with open(template_path(arch), "rb") as f:
        template_bytes = f.read()
    manifest = json.loads(template_bytes)
    mapping = build_mapping(manifest)
    sd = normalize_state_dict(torch.load(ckpt_path, map_location="cpu"))

    missing = sorted(k for k in mapping if k not in sd)
    extra = sorted(k for k in sd if k not in mapping)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing from checkpoint: {', '.join(missing[:8])}"
                         + (" ..." if len(missing) > 8 else ""))
        if extra:
            parts.append(f"unmatched in checkpoint: {', '.join(extra[:8])}"
                         + (" ..." if len(extra) > 8 else ""))
        raise MappingError(f"checkpoint does not match {arch}: "
                           + "; ".join(parts))

    store: dict[str, np.ndarray] = {}
    bad_dims = []
    for src, (dst, dims) in mapping.items():
        t = sd[src]
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np.float32)
        if tuple(arr.shape) != dims:
            bad_dims.append(f"{src}: {tuple(arr.shape)} vs expected {dims}")
            continue
        store[dst] = arr
    if bad_dims:
        raise MappingError(f"checkpoint does not match {arch}, wrong dims: "
                           + "; ".join(bad_dims[:8])
                           + (" ..." if len(bad_dims) > 8 else ""))

    os.makedirs(out_dir, exist_ok=True)
    archive_path = os.path.join(out_dir, f"{arch}.pkt")
    manifest_path = os.path.join(out_dir, f"{arch}.model.json")
    write_archive(store, archive_path)
    with open(manifest_path, "wb") as f:
        f.write(template_bytes)
    return archive_path, manifest_path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="export.py",
        description="Convert a PyTorch checkpoint to a .pkt archive + manifest")
    ap.add_argument("--arch", required=True, choices=ARCHITECTURES)
    ap.add_argument("--ckpt", required=True, help="checkpoint file (torch.save)")
    ap.add_argument("--out", required=True, help="output directory")
    args = ap.parse_args(argv)
    try:
        archive_path, manifest_path = export(args.ckpt, args.arch, args.out)
    except (MappingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {archive_path}")
    print(f"wrote {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
