"""Self-describing tensor container used for every file this package writes.

Layout::

    STRUCTRA-CONTAINER 1\\n
    <header byte length, ASCII decimal>\\n
    <header: UTF-8 JSON object>\\n
    <blob: concatenated little-endian float64 tensors, row-major>

The header holds ``kind``, free-form ``meta``, ``blob_sha256`` and a
``tensors`` list of ``{"name", "shape", "offset", "nbytes"}`` entries where
``offset`` is relative to the start of the blob.  Tensor order in the blob
follows the list.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"STRUCTRA-CONTAINER 1\n"
_DTYPE = np.dtype("<f8")


class ContainerError(ValueError):
    pass


def write_container(path, kind: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype=_DTYPE)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "kind": kind,
        "meta": meta or {},
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(head)}\n".encode())
        fh.write(head)
        fh.write(b"\n")
        fh.write(blob)
    os.replace(tmp, path)


def read_container(path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)``; everything is validated before anything is returned."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise ContainerError(f"{path}: bad magic line")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    try:
        head_len = int(rest[:nl].decode("ascii"))
        head_bytes = rest[nl + 1: nl + 1 + head_len]
        header = json.loads(head_bytes.decode())
        entries = header["tensors"]
        digest = header["blob_sha256"]
    except (ValueError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise ContainerError(f"{path}: corrupted header ({exc})") from exc
    blob_start = nl + 1 + head_len
    if rest[blob_start: blob_start + 1] != b"\n":
        raise ContainerError(f"{path}: corrupted header (length field does not match)")
    blob = rest[blob_start + 1:]
    if hashlib.sha256(blob).hexdigest() != digest:
        raise ContainerError(f"{path}: blob checksum mismatch")
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {header.get('kind')!r}")
    tensors = {}
    for entry in entries:
        name = entry["name"]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != count * _DTYPE.itemsize or entry["offset"] + entry["nbytes"] > len(blob):
            raise ContainerError(f"{path}: tensor {name!r} has inconsistent extent")
        arr = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=entry["offset"]).reshape(shape)
        tensors[name] = arr.astype(np.float64)
    return tensors, header.get("meta", {})
