"""Flat binary containers for float64 arrays.

Two layouts, both little-endian:

Single array (dataset images):
    magic  b"MSDNARR1"          8 bytes
    ndim   uint8
    dims   uint32 * ndim
    data   float64 * prod(dims)

Named array bundle (checkpoints):
    magic  b"MSDNCKP1"          8 bytes
    meta   uint16 length + UTF-8 bytes (free-form tag, e.g. a config hash)
    count  uint32
    then per entry:
        name   uint16 length + UTF-8 bytes
        ndim   uint8
        dims   uint32 * ndim
        data   float64 * prod(dims)
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InputError

ARRAY_MAGIC = b"MSDNARR1"
BUNDLE_MAGIC = b"MSDNCKP1"


def _write_array_body(f, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.tobytes())


def _read_array_body(f) -> np.ndarray:
    (ndim,) = struct.unpack("<B", f.read(1))
    dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8")
    if data.size != count:
        raise InputError("truncated array data")
    return data.reshape(dims).astype(np.float64)


def write_array(path, arr: np.ndarray):
    with open(path, "wb") as f:
        f.write(ARRAY_MAGIC)
        _write_array_body(f, arr)


def read_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(8) != ARRAY_MAGIC:
            raise InputError(f"{path} is not an array file")
        return _read_array_body(f)


def write_bundle(path, arrays: dict, meta: str = ""):
    with open(path, "wb") as f:
        f.write(BUNDLE_MAGIC)
        meta_b = meta.encode()
        f.write(struct.pack("<H", len(meta_b)))
        f.write(meta_b)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            name_b = name.encode()
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            _write_array_body(f, arr)


def read_bundle(path) -> tuple[dict, str]:
    with open(path, "rb") as f:
        if f.read(8) != BUNDLE_MAGIC:
            raise InputError(f"{path} is not a checkpoint bundle")
        (meta_len,) = struct.unpack("<H", f.read(2))
        meta = f.read(meta_len).decode()
        (count,) = struct.unpack("<I", f.read(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            arrays[name] = _read_array_body(f)
        return arrays, meta
