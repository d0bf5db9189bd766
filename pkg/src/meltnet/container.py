"""Checksummed little-endian binary blobs and structured-text sidecars.

Every blob is ``MAGIC(6) | version(uint16 LE) | payload | checksum(uint64 LE)``
where the checksum is the 8-byte BLAKE2b digest of the payload read as a
little-endian integer. Float payloads are ``<f4``; byte payloads are ``u1``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ChecksumError, FormatError, TruncatedBlobError, VersionMismatchError

MAGIC = b"MLTNET"
BLOB_VERSION = 1
_HEADER = struct.Struct("<6sH")
_TRAILER = struct.Struct("<Q")


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def pack_blob(array: np.ndarray, dtype: str = "<f4") -> bytes:
    payload = np.ascontiguousarray(array, dtype=dtype).tobytes()
    return _HEADER.pack(MAGIC, BLOB_VERSION) + payload + _TRAILER.pack(_checksum(payload))


def unpack_blob(raw: bytes, dtype: str = "<f4", shape=None) -> np.ndarray:
    if len(raw) < _HEADER.size + _TRAILER.size:
        raise TruncatedBlobError(f"blob is only {len(raw)} bytes")
    magic, version = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad blob magic {magic!r}")
    if version != BLOB_VERSION:
        raise VersionMismatchError(f"blob version {version}, expected {BLOB_VERSION}")
    payload = raw[_HEADER.size : -_TRAILER.size]
    (stored,) = _TRAILER.unpack_from(raw, len(raw) - _TRAILER.size)
    itemsize = np.dtype(dtype).itemsize
    expected = None if shape is None else int(np.prod(shape)) * itemsize
    if len(payload) % itemsize or (expected is not None and len(payload) < expected):
        raise TruncatedBlobError(f"payload of {len(payload)} bytes does not hold the expected data")
    if _checksum(payload) != stored:
        raise ChecksumError("blob checksum mismatch")
    if expected is not None and len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype)
    return arr.reshape(shape) if shape is not None else arr


def write_blob(path, array: np.ndarray, dtype: str = "<f4") -> None:
    Path(path).write_bytes(pack_blob(array, dtype))


def read_blob(path, dtype: str = "<f4", shape=None) -> np.ndarray:
    return unpack_blob(Path(path).read_bytes(), dtype, shape)


def write_text(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_text(path):
    return json.loads(Path(path).read_text())
