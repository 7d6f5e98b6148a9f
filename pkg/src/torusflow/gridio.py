"""File formats: the binary grid-sample container, NDJSON streams, CSV
tables and checksums.

Binary layout (documented contract, little-endian throughout):

    bytes 0..7    magic b"TFGRID\\x01\\n"
    bytes 8..11   uint32 header length L
    bytes 12..12+L-1  UTF-8 JSON header:
        {"dtype": "<f8"|"<c16"|"<f4"|"<c8",
         "shape": [..],
         "meta": {...}}        # seeds, stream ids, dt, nu, N, free-form
    remainder     raw array bytes, C order, little-endian

Every writer records enough metadata to regenerate the array (seed lineage
for stochastic objects, grid geometry for kernels).
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = ["write_grid", "read_grid", "append_ndjson", "read_ndjson",
           "write_csv", "sha256_file"]

MAGIC = b"TFGRID\x01\n"

_ALLOWED = {"<f8", "<c16", "<f4", "<c8"}


def write_grid(path, array: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(array)
    dt = arr.dtype.newbyteorder("<")
    if dt.str not in _ALLOWED:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float/complex 32/64")
    header = json.dumps({"dtype": dt.str, "shape": list(arr.shape),
                         "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([len(header)], dtype="<u4").tobytes())
        fh.write(header)
        fh.write(arr.astype(dt, copy=False).tobytes(order="C"))
    return path


def read_grid(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a grid file (bad magic)")
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        header = json.loads(fh.read(int(hlen)).decode())
        arr = np.frombuffer(fh.read(), dtype=header["dtype"])
    arr = arr.reshape(header["shape"])
    return arr, header.get("meta", {})


def append_ndjson(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=_coerce) + "\n")


def read_ndjson(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def _coerce(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_csv(path, rows: list[dict], fieldnames: list[str] | None = None) -> Path:
    path = Path(path)
    if not rows:
        path.write_text("")
        return path
    fieldnames = fieldnames or list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
