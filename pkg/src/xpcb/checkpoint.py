"""Single-file tensor container.

Layout::

    b"XPCBCKPT"            8-byte magic
    uint32 LE version      (1)
    uint64 LE header_len
    header                 UTF-8 JSON: {"meta": {...}, "tensors": [{name, dtype, shape, offset, nbytes}, ...]}
    payload                concatenated row-major little-endian tensors

Tensors are stored as float32 (ints as int64) so round trips are bit-exact.
The header is written with sorted keys, so identical content gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArtifactMismatch

MAGIC = b"XPCBCKPT"
VERSION = 1
_DTYPES = {"float32": "<f4", "int64": "<i8"}


def _as_storable(arr: np.ndarray) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    if np.issubdtype(arr.dtype, np.integer):
        return "int64", np.array(arr, dtype="<i8", order="C")
    return "float32", np.array(arr, dtype="<f4", order="C")


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        dtype, arr = _as_storable(tensors[name])
        raw = arr.tobytes(order="C")
        index.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta or {}), "tensors": index}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise ArtifactMismatch("not an XPCB checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack("<IQ", blob[8:20])
        if version != VERSION:
            raise ArtifactMismatch(f"unsupported checkpoint version {version}")
        header = json.loads(blob[20 : 20 + hlen].decode())
        base = 20 + hlen
        tensors = {}
        for t in header["tensors"]:
            start = base + t["offset"]
            buf = blob[start : start + t["nbytes"]]
            if len(buf) != t["nbytes"]:
                raise ArtifactMismatch(f"checkpoint truncated at tensor {t['name']}")
            arr = np.frombuffer(buf, dtype=_DTYPES[t["dtype"]]).reshape(t["shape"])
            tensors[t["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        return tensors, header["meta"]
    except (struct.error, UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise ArtifactMismatch(f"corrupt checkpoint header: {exc}") from None


def save(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMismatch(f"checkpoint not found: {path}")
    return loads(path.read_bytes())


def group(tensors: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Tensors stored under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in tensors.items() if k.startswith(p)}


def prefixed(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in params.items()}
