"""Versioned binary container for trained models and bias tables.

Layout (documented in docs/model_format.md):

* 8 magic bytes ``VENTUSM1``;
* 8-byte little-endian unsigned header length;
* UTF-8 JSON header: ``{"model_type", "config", "arrays", "extra"}``
  where ``arrays`` lists ``{"name", "shape", "dtype"}`` in storage order;
* raw little-endian array payloads, concatenated in that order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"VENTUSM1"
_ALLOWED_DTYPES = {"<f8", "<f4", "<i8"}


def save_model(path, model_type: str, config: dict, arrays: dict[str, np.ndarray],
               extra: dict | None = None) -> None:
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}.get(arr.dtype.name)
        if dtype is None:
            arr = arr.astype(np.float64)
            dtype = "<f8"
        arr = np.ascontiguousarray(arr, dtype=dtype)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"model_type": model_type, "config": config, "arrays": entries, "extra": extra or {}},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_model(path) -> tuple[str, dict, dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"model file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MAGIC.decode()}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    for key in ("model_type", "config", "arrays", "extra"):
        if key not in header:
            raise FormatError(f"{path}: header missing '{key}'")

    arrays: dict[str, np.ndarray] = {}
    pos = header_end
    for entry in header["arrays"]:
        dtype = entry["dtype"]
        if dtype not in _ALLOWED_DTYPES:
            raise FormatError(f"{path}: unsupported dtype {dtype!r}")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        chunk = blob[pos:pos + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(
                f"{path}: payload for '{entry['name']}' expected {nbytes} bytes, "
                f"got {len(chunk)}"
            )
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes after payload")
    return header["model_type"], header["config"], arrays, header["extra"]
