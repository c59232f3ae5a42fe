"""Array packing, provenance hashing, and CSV headers shared by file formats."""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np


def pack_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def unpack_array(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(payload["shape"]).copy()


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def array_hash(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def json_hash(obj) -> str:
    return sha256_hex(json.dumps(obj, sort_keys=True))


def csv_header_lines(meta: dict) -> list[str]:
    """Comment lines recording provenance at the top of every emitted CSV."""
    lines = []
    for key in sorted(meta):
        lines.append(f"# {key}: {meta[key]}")
    return lines
