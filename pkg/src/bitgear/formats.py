"""Versioned little-endian binary files.

``BGR1`` binarized model::

    magic "BGR1" | u32 version=1 | u32 M | u32 N | u32 d | u32 L | u32 word_bits=64
    per node: (L+1) f32 scalers, (L+1) * ceil(d/64) u64 code words
    (L+1) f32 layer weights

``BGT1`` teacher checkpoint: magic | u32 version | u32 rows | u32 d | f32 rows*d.

``BGC1`` teacher cache: magic | u32 version | u32 M | u32 L+1 | u32 R |
u32 item ids ordered user, layer, rank.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .binarization import WORD_BITS, BinarizedTable, num_words
from .training import TeacherCache

VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = os.fspath(path)
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(buf: bytes, magic: bytes, n_fields: int) -> tuple[int, ...]:
    size = 4 + 4 * n_fields
    if len(buf) < size:
        raise FormatError("file too short for header")
    if buf[:4] != magic:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {magic!r}")
    fields = struct.unpack_from(f"<{n_fields}I", buf, 4)
    if fields[0] != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {fields[0]}")
    return fields


def model_dtype(L: int, d: int) -> np.dtype:
    return np.dtype([("scalers", "<f4", (L + 1,)), ("codes", "<u8", (L + 1, num_words(d)))])


def encode_model(table: BinarizedTable) -> bytes:
    L, d = table.L, table.d
    rec = np.empty(table.num_nodes, dtype=model_dtype(L, d))
    rec["scalers"] = table.scalers
    rec["codes"] = table.codes
    head = b"BGR1" + struct.pack("<6I", VERSION, table.num_users, table.num_items, d, L, WORD_BITS)
    return head + rec.tobytes() + np.asarray(table.layer_weights, dtype="<f4").tobytes()


def decode_model(buf: bytes) -> BinarizedTable:
    _, M, N, d, L, word_bits = _header(buf, b"BGR1", 6)
    if word_bits != WORD_BITS:
        raise FormatError(f"unsupported word width {word_bits}")
    dt = model_dtype(L, d)
    off = 28
    expected = off + (M + N) * dt.itemsize + 4 * (L + 1)
    if len(buf) != expected:
        raise FormatError(f"model file is {len(buf)} bytes, expected {expected}")
    rec = np.frombuffer(buf, dtype=dt, count=M + N, offset=off)
    w = np.frombuffer(buf, dtype="<f4", count=L + 1, offset=off + (M + N) * dt.itemsize)
    return BinarizedTable(M, N, d, rec["scalers"].astype(np.float32),
                          rec["codes"].astype(np.uint64), w.astype(np.float32))


def save_model(path, table: BinarizedTable) -> None:
    atomic_write(path, encode_model(table))


def load_model(path) -> BinarizedTable:
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def encode_checkpoint(base: np.ndarray) -> bytes:
    rows, d = base.shape
    return b"BGT1" + struct.pack("<3I", VERSION, rows, d) + np.asarray(base, dtype="<f4").tobytes()


def decode_checkpoint(buf: bytes) -> np.ndarray:
    _, rows, d = _header(buf, b"BGT1", 3)
    if len(buf) != 16 + 4 * rows * d:
        raise FormatError("checkpoint size does not match its header")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(rows, d).astype(np.float64)


def save_checkpoint(path, base: np.ndarray) -> None:
    atomic_write(path, encode_checkpoint(base))


def load_checkpoint(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def encode_cache(cache: TeacherCache) -> bytes:
    M, layers, R = cache.items.shape
    return b"BGC1" + struct.pack("<4I", VERSION, M, layers, R) + cache.items.astype("<u4").tobytes()


def decode_cache(buf: bytes) -> TeacherCache:
    _, M, layers, R = _header(buf, b"BGC1", 4)
    if len(buf) != 20 + 4 * M * layers * R:
        raise FormatError("cache size does not match its header")
    items = np.frombuffer(buf, dtype="<u4", offset=20).reshape(M, layers, R).astype(np.int64)
    return TeacherCache(items)


def save_cache(path, cache: TeacherCache) -> None:
    atomic_write(path, encode_cache(cache))


def load_cache(path) -> TeacherCache:
    with open(path, "rb") as fh:
        return decode_cache(fh.read())
