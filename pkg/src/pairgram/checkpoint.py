"""Binary checkpoint files.

Layout: 8 magic bytes, a little-endian uint32 format version, two
length-prefixed UTF-8 blobs (the config text snapshot and a JSON meta
record holding step counters and RNG state), then named float64 arrays:
uint64 count, and per array a length-prefixed name, uint32 ndim, uint64
extents, and the raw little-endian float64 data. Writes go to a
temporary file and are renamed into place, so a checkpoint is never
half-written.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"PGCKPT\x00\x01"
VERSION = 1


class CheckpointVersionError(ValueError):
    pass


def _write_blob(fh, data):
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointVersionError(f"truncated checkpoint while reading {what}")
    return data


def _read_blob(fh, what):
    (n,) = struct.unpack("<Q", _read_exact(fh, 8, what))
    return _read_exact(fh, n, what)


def save_checkpoint(path, arrays, config_text, meta):
    """Atomically write named float64 arrays plus config/meta blobs."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_blob(fh, config_text.encode("utf-8"))
        _write_blob(fh, json.dumps(meta, sort_keys=True).encode("utf-8"))
        fh.write(struct.pack("<Q", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (arrays, config_text, meta); rejects foreign files."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointVersionError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointVersionError(
                f"{path}: format version {version}, expected {VERSION}"
            )
        config_text = _read_blob(fh, "config").decode("utf-8")
        meta = json.loads(_read_blob(fh, "meta").decode("utf-8"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "array count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, "shape"))[0]
                for _ in range(ndim)
            )
            size = int(np.prod(shape)) if shape else 1
            data = _read_exact(fh, size * 8, f"array {name}")
            arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        return arrays, config_text, meta
