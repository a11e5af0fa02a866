"""Self-describing tensor container: JSON header followed by a little-endian payload.

Layout::

    8 bytes   little-endian uint64, length H of the JSON header
    H bytes   UTF-8 JSON: {"tensors": {name: {"dtype", "shape", "offset", "nbytes"}},
                          "meta": {...}}
    rest      concatenated little-endian tensor payloads

Float tensors are stored as ``<f4``; integer tensors (face indices, parents) as ``<i4``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class ContainerError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    header: dict[str, Any] = {"tensors": {}, "meta": dict(meta or {})}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = "i4" if np.issubdtype(arr.dtype, np.integer) else "f4"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        header["tensors"][name] = {
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def decode(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(data) < 8:
        raise ContainerError("truncated container")
    (hlen,) = struct.unpack("<Q", data[:8])
    if 8 + hlen > len(data):
        raise ContainerError("truncated container header")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed container header: {exc}") from exc
    payload = memoryview(data)[8 + hlen :]
    out = {}
    for name, info in header.get("tensors", {}).items():
        dtype = _DTYPES.get(info.get("dtype"))
        if dtype is None:
            raise ContainerError(f"tensor {name!r}: unsupported dtype {info.get('dtype')!r}")
        start, n = int(info["offset"]), int(info["nbytes"])
        if start + n > len(payload):
            raise ContainerError(f"tensor {name!r}: payload out of range")
        arr = np.frombuffer(payload[start : start + n], dtype=dtype).reshape(info["shape"])
        out[name] = arr.astype(np.float64 if dtype.kind == "f" else np.int64)
    return out, header.get("meta", {})


def save(path, tensors, meta=None) -> None:
    atomic_write_bytes(path, encode(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return decode(Path(path).read_bytes())
