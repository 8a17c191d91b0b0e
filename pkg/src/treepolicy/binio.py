"""Small deterministic binary container for model and buffer artifacts.

Layout: one magic line, a 4-byte little-endian header length, a JSON header
(sorted keys), then the raw array blocks in the order the header lists them.
No timestamps or platform fields anywhere, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"treepolicy-bin/v1\n"

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8"), "u1": np.dtype("<u1")}


def write_blocks(path: str, meta: dict, blocks: list[tuple[str, np.ndarray, str]]) -> None:
    """Write ``blocks`` of (name, array, dtype code) preceded by a JSON header."""
    entries = []
    payload = b""
    for name, arr, code in blocks:
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payload += arr.tobytes()
    header = json.dumps({"meta": meta, "blocks": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_blocks(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back into (meta, {name: float64/int64 array})."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ConfigError(f"{path!r} is not a {MAGIC.strip().decode()} artifact")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for entry in header["blocks"]:
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            arr = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"])
            if dtype.kind == "f":
                arr = arr.astype(np.float64)
            elif entry["dtype"] == "u1":
                arr = arr.astype(bool)
            else:
                arr = arr.astype(np.int64)
            arrays[entry["name"]] = arr
    return header["meta"], arrays
