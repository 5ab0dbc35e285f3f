"""Flat binary container of named float64 arrays with a JSON index.

Layout::

    MAGIC (10 bytes) | index length (uint64 LE) | index JSON (utf-8) | payload

The index maps each name to ``{"shape": [...], "offset": int}`` where the
offset counts bytes from the start of the payload. Arrays are stored as
little-endian float64 in C order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LFASRCK\x00v1"
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name in arrays:
        a = np.asarray(arrays[name], dtype="<f8", order="C")
        entries[name] = {"shape": list(a.shape), "offset": offset}
        blobs.append(a.tobytes())
        offset += a.nbytes
    index = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(index)))
        fh.write(index)
        for b in blobs:
            fh.write(b)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint (or wrong version)")
    pos = len(MAGIC)
    if len(raw) < pos + _LEN.size:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    try:
        index = json.loads(raw[pos : pos + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt index: {exc}") from exc
    payload = memoryview(raw)[pos + n :]
    arrays = {}
    for name, e in index["arrays"].items():
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        if start + 8 * count > len(payload):
            raise CheckpointError(f"{path}: array {name!r} runs past end of file")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
    return arrays, index["meta"]
