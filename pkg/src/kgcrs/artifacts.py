"""Byte-stable checkpoint files.

A checkpoint is a JSON document: a ``meta`` object plus named float64/int64
arrays stored as base64 of their little-endian bytes.  Keys are sorted and no
timestamps are written, so identical inputs give identical files.
"""
from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointMismatch

FORMAT_VERSION = 1


def encode_array(a: np.ndarray) -> dict[str, Any]:
    a = np.ascontiguousarray(a)
    dtype = "<i8" if np.issubdtype(a.dtype, np.integer) else "<f8"
    data = a.astype(dtype).tobytes()
    return {"dtype": dtype, "shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def decode_array(d: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).astype(
        np.int64 if d["dtype"] == "<i8" else np.float64)


def save(path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
    doc = {"format": kind, "version": FORMAT_VERSION, "meta": meta,
           "arrays": {k: encode_array(v) for k, v in arrays.items()}}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load(path: str | Path, kind: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != kind:
        raise CheckpointMismatch(f"{path}: expected a {kind!r} file, found {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported version {doc.get('version')}")
    return {k: decode_array(v) for k, v in doc["arrays"].items()}, doc["meta"]


def digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
