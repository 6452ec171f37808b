"""Byte-stable binary container for named arrays plus JSON metadata.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw array blobs in header order. Arrays are stored little-endian,
so files hash identically across platforms and runs.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SMFCKPT1"

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _wire_dtype(arr: np.ndarray) -> str:
    kind = arr.dtype.kind + str(arr.dtype.itemsize)
    table = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}
    if kind not in table:
        raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
    return table[kind]


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        wire = _wire_dtype(arr)
        blobs.append(arr.astype(_DTYPES[wire], copy=False).tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": wire})
    header = json.dumps(
        {"version": 1, "meta": meta, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ValueError(
                    f"{path}: truncated blob for {entry['name']}: "
                    f"expected {count * dtype.itemsize} bytes, got {len(raw)}"
                )
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return tensors, header["meta"]
