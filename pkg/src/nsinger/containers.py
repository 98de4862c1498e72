"""Binary container for mel-shaped matrices.

Layout (little-endian): a 16-byte header ``magic "NSMEL\\0"``, ``u16 version``,
``u16 N``, ``u32 L``, ``u16`` reserved (zero), followed by ``N * L`` float32
values in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, ParseError, VersionMismatchError

MAGIC = b"NSMEL\x00"
VERSION = 1
_HEADER = struct.Struct("<6sHHIH")
assert _HEADER.size == 16


def encode_mel(values) -> bytes:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"expected an N x L matrix, got shape {arr.shape}")
    n, length = arr.shape
    return _HEADER.pack(MAGIC, VERSION, n, length, 0) + arr.astype("<f4", copy=False).tobytes()


def decode_mel(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise CorruptFileError("truncated mel header")
    magic, version, n, length, _ = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError("not a mel container (bad magic)")
    if version != VERSION:
        raise VersionMismatchError(f"mel container version {version}, expected {VERSION}")
    expected = _HEADER.size + 4 * n * length
    if len(data) != expected:
        raise CorruptFileError(f"mel container holds {len(data)} bytes, header implies {expected}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, length).copy()


def write_mel(values, path) -> None:
    Path(path).write_bytes(encode_mel(values))


def read_mel(path) -> np.ndarray:
    return decode_mel(Path(path).read_bytes())
