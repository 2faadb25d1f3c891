"""Versioned binary container: JSON header plus little-endian array payload.

Layout::

    magic (8 bytes) | version u32 | header length u64 | header JSON | payload

The header lists every array (name, dtype, shape, byte offset) and a SHA-256
digest of the payload, so truncation or corruption is detected on read.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"f8": "<f8", "i8": "<i8"}


class ContainerError(ValueError):
    pass


def write_container(path, magic: bytes, version: int, meta: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    index, chunks, offset = [], [], 0
    for name, a in arrays.items():
        a = np.asarray(a)
        kind = "f8" if a.dtype.kind == "f" else "i8"
        raw = np.ascontiguousarray(a, dtype=_DTYPES[kind]).tobytes()
        index.append({"name": name, "dtype": kind, "shape": list(a.shape), "offset": offset,
                      "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps({"meta": meta, "arrays": index,
                         "sha256": hashlib.sha256(payload).hexdigest()},
                        sort_keys=True).encode("utf-8")
    blob = _PREFIX.pack(magic, version, len(header)) + header + payload
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_container(path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise ContainerError(f"{path}: file too short")
    got_magic, got_version, hlen = _PREFIX.unpack_from(blob)
    if got_magic != magic:
        raise ContainerError(f"{path}: not a {magic!r} file")
    if got_version != version:
        raise ContainerError(f"{path}: version {got_version}, expected {version}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen])
    except ValueError as err:
        raise ContainerError(f"{path}: corrupt header ({err})") from None
    payload = blob[start + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ContainerError(f"{path}: payload checksum mismatch (truncated or corrupt)")
    arrays = {}
    for item in header["arrays"]:
        raw = payload[item["offset"]:item["offset"] + item["nbytes"]]
        arrays[item["name"]] = np.frombuffer(raw, dtype=_DTYPES[item["dtype"]]) \
            .reshape(item["shape"]).copy()
    return header["meta"], arrays
