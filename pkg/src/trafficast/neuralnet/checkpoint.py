"""Binary model container.

Layout (little-endian)::

    8 bytes   magic b"TRFCKPT\\0"
    u32       format version
    u32       manifest length in bytes
    ...       manifest, UTF-8 JSON (model config, parameter names and shapes, metadata)
    ...       float64 parameters, row-major, in manifest order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Sequential

MAGIC = b"TRFCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(model: Sequential, metadata: dict | None = None) -> bytes:
    names, shapes, blobs = [], [], []
    for name, p in model.named_params():
        names.append(name)
        shapes.append(list(p.shape))
        blobs.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    manifest = {"model": model.config(), "params": [[n, s] for n, s in zip(names, shapes)],
                "metadata": metadata or {}}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + b"".join(blobs)


def from_bytes(data: bytes) -> tuple[Sequential, dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a trafficast checkpoint (bad magic)")
    version, size = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    manifest = json.loads(data[16:16 + size].decode("utf-8"))
    model = Sequential.from_config(manifest["model"])
    offset = 16 + size
    params = {}
    for name, shape in manifest["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError("truncated checkpoint")
        params[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    model.set_params(params)
    for layer in model.layers:
        layer.zero_grads()
    return model, manifest["metadata"]


def save(model: Sequential, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(model, metadata))
    return path


def load(path) -> tuple[Sequential, dict]:
    return from_bytes(Path(path).read_bytes())
