"""Versioned binary container for named float32 parameter blocks.

Layout (all integers little-endian)::

    8 bytes   magic  b"SSTRLCK\\0"
    u32       format version
    u32       header length L
    L bytes   UTF-8 JSON header:
                {"version": int, "meta": {...},
                 "blocks": [{"name", "shape", "offset", "nbytes", "crc32"}, ...]}
    payload   concatenated little-endian float32 arrays, offsets relative
              to the start of the payload
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

MAGIC = b"SSTRLCK\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_container(path: str | Path, blocks: Mapping[str, np.ndarray],
                    meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in blocks.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({
            "name": name,
            "shape": list(np.shape(arr)),
            "offset": offset,
            "nbytes": len(data),
            "crc32": zlib.crc32(data),
        })
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"version": FORMAT_VERSION, "meta": dict(meta or {}),
                         "blocks": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def read_container(path: str | Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: container version {version} != supported {FORMAT_VERSION}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    payload = raw[16 + hlen:]
    blocks: Dict[str, np.ndarray] = {}
    for e in header["blocks"]:
        data = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(data) != e["nbytes"]:
            raise CheckpointError(f"block {e['name']!r}: truncated")
        if zlib.crc32(data) != e["crc32"]:
            raise CheckpointError(f"block {e['name']!r}: checksum mismatch (corrupted)")
        arr = np.frombuffer(data, dtype="<f4").astype(np.float32)
        expected = int(np.prod(e["shape"])) if e["shape"] else 1
        if arr.size != expected:
            raise CheckpointError(f"block {e['name']!r}: shape {e['shape']} does not match data")
        blocks[e["name"]] = arr.reshape(e["shape"])
    return header["meta"], blocks
