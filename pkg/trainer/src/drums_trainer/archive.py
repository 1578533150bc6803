"""Tensor archive reader/writer.

Wire format (all integers little-endian u32):

    b"DRUMTNSR" | version=1 | count | count x entry

    entry: name_len | name utf-8 | dtype (0 float32, 1 complex64)
           | ndim | ndim dims | raw C-order payload

This is a deliberately independent implementation of the format the
reconstruction package defines; the two are kept byte-compatible by
the round-trip tests. Only float32 and complex64 payloads exist, and
writers reject anything wider so narrowing is always explicit.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DRUMTNSR"
VERSION = 1

_CODES = {0: np.dtype("<f4"), 1: np.dtype("<c8")}


class ArchiveFormatError(Exception):
    """Archive bytes do not form a valid tensor archive."""


def _storable(name, arr):
    arr = np.asarray(arr)
    if arr.dtype == np.dtype("<f4"):
        code = 0
    elif arr.dtype == np.dtype("<c8"):
        code = 1
    else:
        raise TypeError(
            f"entry {name!r}: dtype {arr.dtype} is not storable; "
            "convert to float32 or complex64 first"
        )
    arr = np.ascontiguousarray(arr)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    return code, arr


def write_tensors(path, entries):
    """Write an ordered mapping or (name, array) iterable to ``path``."""
    if hasattr(entries, "items"):
        entries = list(entries.items())
    else:
        entries = list(entries)
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        raise ArchiveFormatError("duplicate entry names")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            code, arr = _storable(name, arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def _take(buf, offset, n, what):
    end = offset + n
    if end > len(buf):
        raise ArchiveFormatError(f"archive ends inside {what}")
    return buf[offset:end], end


def read_tensors(path):
    """Read an archive into an insertion-ordered name -> array dict."""
    with open(path, "rb") as fh:
        buf = fh.read()
    head, off = _take(buf, 0, len(MAGIC), "magic")
    if head != MAGIC:
        raise ArchiveFormatError(f"{path}: bad magic")
    raw, off = _take(buf, off, 8, "header")
    version, count = struct.unpack("<II", raw)
    if version != VERSION:
        raise ArchiveFormatError(f"{path}: unsupported version {version}")
    out = {}
    for i in range(count):
        raw, off = _take(buf, off, 4, f"entry {i} name length")
        (name_len,) = struct.unpack("<I", raw)
        raw, off = _take(buf, off, name_len, f"entry {i} name")
        name = raw.decode("utf-8")
        raw, off = _take(buf, off, 8, f"entry {name!r} header")
        code, ndim = struct.unpack("<II", raw)
        if code not in _CODES:
            raise ArchiveFormatError(f"{path}: entry {name!r} dtype code {code}")
        raw, off = _take(buf, off, 4 * ndim, f"entry {name!r} dims")
        dims = struct.unpack(f"<{ndim}I", raw)
        dtype = _CODES[code]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw, off = _take(buf, off, n_bytes, f"entry {name!r} payload")
        if name in out:
            raise ArchiveFormatError(f"{path}: duplicate entry {name!r}")
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if off != len(buf):
        raise ArchiveFormatError(f"{path}: {len(buf) - off} trailing bytes")
    return out
