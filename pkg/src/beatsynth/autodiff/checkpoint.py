"""TSNN checkpoint files.

Layout (little-endian)::

    b"TSNN" | u8 version | u32 meta_len | meta (UTF-8 JSON)
    u32 n_entries
    per entry: u32 name_len | name | u32 ndim | u32 dims[ndim] | f64 payload
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"TSNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict, meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    try:
        version, meta_len = struct.unpack_from("<BI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 9
        meta = json.loads(buf[off:off + meta_len])
        off += meta_len
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        state: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(n):
            (nl,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nl].decode()
            off += nl
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if off + 8 * count > len(buf):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            state[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    return state, meta
