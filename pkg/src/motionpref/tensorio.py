"""Reading and writing the ``.ten`` tensor file format.

A ``.ten`` file is one line of UTF-8 JSON (``dtype``, ``shape``, ``byte_order``)
followed by the raw little-endian float32 payload in row-major order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

HEADER_FIELDS = ("dtype", "shape", "byte_order")


class TensorFormatError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = {"dtype": "f32", "shape": [int(s) for s in arr.shape], "byte_order": "little"}
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + arr.tobytes(order="C")


def loads(blob: bytes) -> np.ndarray:
    newline = blob.find(b"\n")
    if newline < 0:
        raise TensorFormatError("missing header terminator")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"bad header: {exc}") from exc
    if header.get("dtype") != "f32" or header.get("byte_order") != "little":
        raise TensorFormatError(f"unsupported header {header}")
    shape = tuple(int(s) for s in header["shape"])
    payload = blob[newline + 1 :]
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise TensorFormatError(f"payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
