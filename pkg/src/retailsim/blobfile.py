"""Tiny container format: magic, JSON header, raw float64 arrays.

Layout (integers little-endian)::

    8 bytes   magic (6-byte tag + 2-byte format version)
    8 bytes   uint64 length L of the header
    L bytes   UTF-8 JSON header; header["arrays"] lists [name, shape] pairs
    ...       float64 arrays, C order, in the listed order
"""

from __future__ import annotations

import json
import struct

import numpy as np


def write_blob(path, magic: bytes, header: dict, arrays: dict) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    arrays = {k: np.asarray(v, dtype=float) for k, v in arrays.items()}
    meta = dict(header)
    meta["arrays"] = [[k, list(v.shape)] for k, v in arrays.items()]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_blob(path, magic: bytes) -> tuple[dict, dict]:
    """Header and arrays of a file written by :func:`write_blob` with ``magic``."""
    with open(path, "rb") as fh:
        got = fh.read(8)
        if got[:6] != magic[:6]:
            raise ValueError(f"{path}: not a {magic[:6].decode(errors='replace')} file")
        if got != magic:
            raise ValueError(f"{path}: unsupported format version")
        (size,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(size).decode("utf-8"))
        arrays = {}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return meta, arrays
