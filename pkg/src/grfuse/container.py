"""GRF1 binary tensor container.

Layout: 4-byte magic ``GRF1``, one version byte, uint32-LE manifest
length, JSON manifest (arbitrary ``meta`` dict plus parameter names,
shapes and scalar widths), then the raw little-endian payloads in manifest
order.  Save -> load -> save is byte-identical; writes go through a temp
file and an atomic rename.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import FormatError

MAGIC = b"GRF1"
VERSION = 1


def save_tensors(path: str, meta: dict, params: dict[str, np.ndarray]) -> None:
    names = sorted(params)
    manifest = {
        "meta": meta,
        "params": [
            {"name": k, "shape": list(params[k].shape), "dtype": params[k].dtype.str.lstrip("<>=|")}
            for k in names
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for k in names:
            arr = np.ascontiguousarray(params[k])
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    os.replace(tmp, path)


def load_tensors(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad container magic {data[:4]!r} (expected {MAGIC!r})")
    if len(data) < 9:
        raise FormatError("truncated container header")
    if data[4] != VERSION:
        raise FormatError(f"unsupported container version {data[4]}")
    mlen = int.from_bytes(data[5:9], "little")
    try:
        manifest = json.loads(data[9 : 9 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt container manifest: {exc}") from exc
    params: dict[str, np.ndarray] = {}
    offset = 9 + mlen
    for entry in manifest["params"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise FormatError(f"truncated payload at tensor {entry['name']!r}")
        arr = np.frombuffer(data[offset : offset + nbytes], dtype=dt).reshape(entry["shape"])
        params[entry["name"]] = np.ascontiguousarray(arr.astype(dt.newbyteorder("="), copy=False))
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after payload")
    return manifest["meta"], params
