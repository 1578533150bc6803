"""Named dense tensors and the DRUMTNSR archive container.

A DRUMTNSR file is a flat, little-endian binary archive of named
tensors. It is the only on-disk interchange format used by the
reconstruction pipeline: k-space dumps, sensitivity maps, subspace
bases, network weights, and parameter maps all travel through it.

Layout:

    magic    8 bytes   b"DRUMTNSR"
    version  u32       format version, currently 1
    count    u32       number of entries
    entry*   count times:
        name_len  u32
        name      name_len bytes, UTF-8
        dtype     u32     0 = real32, 1 = complex64
        ndim      u32
        dims      ndim * u32, C order (row-major)
        payload   prod(dims) * itemsize bytes, C order

Payloads are raw IEEE-754 little-endian float32 values; complex64
entries store interleaved (real, imag) pairs. Entry names must be
unique within an archive.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DRUMTNSR"
VERSION = 1

_DTYPE_REAL32 = 0
_DTYPE_COMPLEX64 = 1

_CODE_FOR_DTYPE = {
    np.dtype(np.float32): _DTYPE_REAL32,
    np.dtype(np.complex64): _DTYPE_COMPLEX64,
}
_DTYPE_FOR_CODE = {
    _DTYPE_REAL32: np.dtype("<f4"),
    _DTYPE_COMPLEX64: np.dtype("<c8"),
}


class ArchiveError(Exception):
    """Base class for archive format errors."""


class BadMagicError(ArchiveError):
    """File does not start with the DRUMTNSR magic bytes."""


class UnsupportedVersionError(ArchiveError):
    """Archive version is newer than this reader understands."""


class TruncatedArchiveError(ArchiveError):
    """File ends before the declared entries are complete."""


class DuplicateNameError(ArchiveError):
    """Two entries in one archive share a name."""


class Tensor:
    """A named dense array, float32 or complex64, at least 1-D.

    The data buffer is normalized to C order and little-endian byte
    order on construction and marked read-only; tensors are immutable
    once built.
    """

    __slots__ = ("name", "data")

    def __init__(self, name, data):
        if not isinstance(name, str) or not name:
            raise ValueError("tensor name must be a non-empty string")
        arr = np.asarray(data)
        if arr.dtype == np.float64 or arr.dtype == np.int64 or arr.dtype == np.int32:
            raise TypeError(
                f"tensor {name!r}: dtype {arr.dtype} is not storable; "
                "convert to float32 or complex64 explicitly"
            )
        if arr.dtype == np.complex64:
            arr = np.ascontiguousarray(arr, dtype="<c8")
        elif arr.dtype == np.float32:
            arr = np.ascontiguousarray(arr, dtype="<f4")
        else:
            raise TypeError(
                f"tensor {name!r}: unsupported dtype {arr.dtype}; "
                "expected float32 or complex64"
            )
        if arr.ndim < 1:
            arr = arr.reshape(1)
        arr.flags.writeable = False
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, key, value):
        raise AttributeError("Tensor is immutable")

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedArchiveError(f"archive ends inside {what}")
    return buf


def write_archive(path, tensors):
    """Write an iterable of Tensors to ``path``.

    Entries are written in the given order. Raises DuplicateNameError
    if two tensors share a name.
    """
    tensors = list(tensors)
    seen = set()
    for t in tensors:
        if not isinstance(t, Tensor):
            raise TypeError(f"expected Tensor, got {type(t).__name__}")
        if t.name in seen:
            raise DuplicateNameError(f"duplicate tensor name {t.name!r}")
        seen.add(t.name)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for t in tensors:
            name = t.name.encode("utf-8")
            code = _CODE_FOR_DTYPE[t.data.dtype]
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<II", code, t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.tobytes(order="C"))


def read_archive(path):
    """Read a DRUMTNSR file and return its tensors in file order."""
    tensors = []
    seen = set()
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"{path}: not a DRUMTNSR archive")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise UnsupportedVersionError(
                f"{path}: archive version {version}, reader supports {VERSION}"
            )
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, f"entry {i} name length"))
            name = _read_exact(fh, name_len, f"entry {i} name").decode("utf-8")
            code, ndim = struct.unpack("<II", _read_exact(fh, 8, f"entry {name!r} header"))
            if code not in _DTYPE_FOR_CODE:
                raise ArchiveError(f"{path}: entry {name!r} has unknown dtype code {code}")
            dims = struct.unpack(
                f"<{ndim}I", _read_exact(fh, 4 * ndim, f"entry {name!r} dims")
            )
            dtype = _DTYPE_FOR_CODE[code]
            n_items = 1
            for d in dims:
                n_items *= d
            payload = _read_exact(fh, n_items * dtype.itemsize, f"entry {name!r} payload")
            if name in seen:
                raise DuplicateNameError(f"{path}: duplicate tensor name {name!r}")
            seen.add(name)
            arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
            tensors.append(Tensor(name, arr))
        trailing = fh.read(1)
        if trailing:
            raise ArchiveError(f"{path}: trailing bytes after last entry")
    return tensors


def read_archive_dict(path):
    """Read an archive into a name -> ndarray mapping."""
    return {t.name: t.data for t in read_archive(path)}


def write_archive_dict(path, mapping):
    """Write a name -> array mapping, converting values to tensors.

    Values must already be float32 or complex64; real inputs of other
    float widths are rejected so that precision loss is always explicit
    at the call site.
    """
    write_archive(path, [Tensor(k, v) for k, v in mapping.items()])


def as_real32(arr):
    """Explicit narrowing conversion for archive storage."""
    return np.asarray(arr, dtype=np.float32)


def as_complex64(arr):
    """Explicit narrowing conversion for archive storage."""
    return np.asarray(arr, dtype=np.complex64)
