"""Versioned binary container shared by stats, estimators, indexes and planners.

Layout (all integers little-endian)::

    b"FANNPLAN"            8-byte magic
    uint32 format version
    uint32 header length H
    H bytes UTF-8 JSON header {"version", "kind", "meta", "arrays": [...]}
    array payloads, each at header-declared offset from the end of the header

Each array entry records ``name``, ``dtype`` (explicit little-endian numpy
code such as ``<f8``), ``shape``, ``offset`` and ``nbytes``. Array names may
carry a ``section/`` prefix when one file holds several models.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FANNPLAN"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Unreadable, mismatched or wrong-kind container file."""


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == object:
        raise ContainerError("object arrays cannot be stored")
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, payload, offset = [], [], 0
    for name in sorted(arrays):
        arr = _le(np.asarray(arrays[name]))
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payload.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": FORMAT_VERSION, "kind": kind, "meta": meta, "arrays": entries}, sort_keys=True
    ).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(payload)


def loads(blob: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ContainerError("not a fannplan container (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise ContainerError(f"container version {version} != supported {FORMAT_VERSION}")
    start = 16 + hlen
    if start > len(blob):
        raise ContainerError("truncated container header")
    header = json.loads(blob[16:start].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise ContainerError(f"header version {header.get('version')} != supported {FORMAT_VERSION}")
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"expected a {kind!r} container, found {header['kind']!r}")
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(blob):
            raise ContainerError(f"array {e['name']!r} truncated at byte {len(blob)}")
        arr = np.frombuffer(blob[lo:hi], dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header, arrays


def save(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write a container; returns its sha256 fingerprint."""
    blob = dumps(kind, meta, arrays)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes(), kind)


def fingerprint(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(dumps(kind, meta, arrays)).hexdigest()


def read_header(path) -> dict:
    """Parse just the JSON header (no array payloads)."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:8] != MAGIC:
            raise ContainerError("not a fannplan container (bad magic)")
        _, hlen = struct.unpack_from("<II", head, 8)
        return json.loads(fh.read(hlen).decode("utf-8"))


def split_sections(arrays: dict[str, np.ndarray]) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in arrays.items():
        section, _, key = name.rpartition("/")
        out.setdefault(section, {})[key] = arr
    return out


def prefixed(section: str, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{section}/{k}": v for k, v in arrays.items()}
