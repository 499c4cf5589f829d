"""Deterministic binary container for model files.

Layout: 8-byte magic, 4-byte little-endian header length, UTF-8 JSON
header (kind, version, metadata, array manifest), then the raw array
payloads in manifest order as little-endian C-order bytes. Writing the
same object twice yields identical bytes, which zip-based containers do
not guarantee; re-serialization round-trips are byte-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"MSCN\x00BIN"


def write_container(
    path: str | Path,
    kind: str,
    version: int,
    meta: dict,
    arrays: dict[str, np.ndarray],
) -> None:
    manifest = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append(
            {"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)}
        )
        payloads.append(le.tobytes())
    header = json.dumps(
        {"kind": kind, "version": version, "meta": meta, "arrays": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def read_container(
    path: str | Path, kind: str, version: int
) -> tuple[dict, dict[str, np.ndarray]]:
    with Path(path).open("rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a mobscreen container file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        if header["kind"] != kind:
            raise ValueError(f"{path}: expected {kind!r}, found {header['kind']!r}")
        if header["version"] != version:
            raise ValueError(
                f"{path}: unsupported {kind} version {header['version']}"
            )
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            n_items = int(np.prod(spec["shape"])) if spec["shape"] else 1
            raw = fh.read(dtype.itemsize * n_items)
            arr = np.frombuffer(raw, dtype=dtype).reshape(spec["shape"])
            arrays[spec["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
        return header["meta"], arrays
