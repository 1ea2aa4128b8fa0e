"""Versioned binary container for named arrays plus JSON metadata.

Layout::

    LMCLAB\\n
    <header: one line of compact, key-sorted JSON>\\n
    <payload: arrays back to back, little-endian, C order>

The header lists each array's name, dtype and shape, the payload length and
its SHA-256 digest. Identical inputs always serialize to identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CorruptPayloadError, FormatError, UnsupportedVersionError

MAGIC = b"LMCLAB\n"
FORMAT_VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def dumps(kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]],
          version: int = FORMAT_VERSION) -> bytes:
    chunks, specs = [], []
    for name, arr in arrays:
        arr = np.asarray(arr)
        dt = "<f8" if arr.dtype.kind == "f" else "<i8"
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes())
        specs.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
    payload = b"".join(chunks)
    header = {
        "format_version": version,
        "kind": kind,
        "meta": meta,
        "arrays": specs,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return MAGIC + line.encode() + b"\n" + payload


def loads(data: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container; returns ``(meta, {name: array})``."""
    if not data.startswith(MAGIC):
        raise FormatError("not an lmclab container (bad magic)")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise CorruptPayloadError("header line is not terminated")
    try:
        header = json.loads(data[len(MAGIC):end])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayloadError(f"unreadable header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version!r} (this build reads {FORMAT_VERSION})")
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} container, found {header.get('kind')!r}")
    payload = data[end + 1:]
    if len(payload) != header["payload_bytes"]:
        raise CorruptPayloadError(
            f"corrupt payload: {len(payload)} bytes, header says {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CorruptPayloadError("corrupt payload: checksum mismatch")
    arrays, offset = {}, 0
    for spec in header["arrays"]:
        dt = _DTYPES[spec["dtype"]]
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=offset).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
        offset += count * dt.itemsize
    return header["meta"], arrays


def save(path, kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes(), kind)
