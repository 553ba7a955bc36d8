"""Versioned binary checkpoint container.

Layout: 8-byte magic, uint32 version, uint64 header length, JSON header,
then each array as uint64 byte-length + raw little-endian data in header
order.  The header carries dtype/shape for every array plus arbitrary
metadata (config, config hash, seed, taxonomy).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"RTLKCKPT"
VERSION = 1


def save_checkpoint(path, arrays: dict, metadata: dict) -> None:
    names = sorted(arrays)
    header = {
        "arrays": [
            {
                "name": name,
                "dtype": str(arrays[name].dtype),
                "shape": list(arrays[name].shape),
            }
            for name in names
        ],
        **metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            arr = np.ascontiguousarray(arrays[name])
            payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path):
    """Return (arrays dict, metadata dict); raises CheckpointError on damage."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    cursor = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, cursor)
    cursor += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, cursor)
    cursor += 8
    try:
        header = json.loads(data[cursor : cursor + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint header: {exc}") from None
    cursor += header_len
    arrays = {}
    for spec in header.get("arrays", []):
        if cursor + 8 > len(data):
            raise CheckpointError(f"{path}: truncated before array {spec['name']!r}")
        (nbytes,) = struct.unpack_from("<Q", data, cursor)
        cursor += 8
        if cursor + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated array {spec['name']!r}")
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        arr = np.frombuffer(data[cursor : cursor + nbytes], dtype=dtype)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(spec["dtype"])
        cursor += nbytes
    metadata = {k: v for k, v in header.items() if k != "arrays"}
    return arrays, metadata
