"""Named-array container used for checkpoints and extractor weights.

Layout::

    b"CYDBARR1"                     8-byte magic
    <uint64 little-endian>          header length in bytes
    <header JSON, utf-8>            {"arrays": [...], "meta": {...}}
    <payload>                       raw little-endian array bytes

Each ``arrays`` entry holds ``name``, ``shape``, ``dtype`` (numpy
dtype string such as ``"<f8"``), ``offset`` (relative to payload start)
and ``nbytes``.  ``meta`` carries arbitrary JSON, e.g. a config snapshot.
"""
from __future__ import annotations

import json
import os
import struct
from typing import Dict, Mapping, Tuple

import numpy as np

MAGIC = b"CYDBARR1"


class ContainerError(ValueError):
    pass


def _as_numpy(value) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_arrays(path, arrays: Mapping[str, object], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.array(_as_numpy(arrays[name]), order="C")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_arrays(path) -> Tuple[Dict[str, np.ndarray], dict]:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"array container not found: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: bad magic, not a named-array container")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise ContainerError(f"{path}: corrupt header ({exc})") from exc
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ContainerError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header.get("meta", {})
