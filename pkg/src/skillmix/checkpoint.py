"""Binary checkpoint files: versioned header, JSON metadata, named tensors.

Layout (little-endian): magic ``SKMX``, format version, a length-prefixed
UTF-8 JSON metadata blob, then a tensor count followed by one record per
tensor -- length-prefixed name, rank, dims, and the float64 payload in
row-major order.  Tensors are written sorted by name so identical state
always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

MAGIC = b"SKMX"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            payload = fh.read(8 * size)
            if len(payload) != 8 * size:
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return tensors, meta
