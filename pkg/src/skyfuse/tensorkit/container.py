"""SKYF tensor container: a tiny self-describing binary array format.

Layout (all little-endian)::

    b"SKYF" | version u16 | dtype u8 | ndim u8 | shape u64[ndim] | payload

dtype 0 is float32; dtype 1 is complex64 stored as interleaved float32
(real, imag) pairs.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from ..errors import ArtifactIOError, FormatError

MAGIC = b"SKYF"
VERSION = 1
DTYPE_F32 = 0
DTYPE_C64 = 1

_HEADER = struct.Struct("<4sHBB")
_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_C64: np.dtype("<c8")}

PathLike = Union[str, Path]


def _dtype_code(arr: np.ndarray) -> int:
    if np.iscomplexobj(arr):
        return DTYPE_C64
    return DTYPE_F32


def to_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    data = np.ascontiguousarray(arr, dtype=_CODES[code])
    if arr.ndim > 255:
        raise FormatError(f"too many dimensions for a container: {arr.ndim}")
    head = _HEADER.pack(MAGIC, VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + data.tobytes()


def write(f: Union[PathLike, BinaryIO], arr) -> int:
    """Write ``arr`` as one container; returns the number of bytes written."""
    blob = to_bytes(arr)
    if isinstance(f, (str, Path)):
        try:
            Path(f).write_bytes(blob)
        except OSError as e:
            raise ArtifactIOError(f"cannot write container {f}: {e}") from e
    else:
        f.write(blob)
    return len(blob)


def read_from(stream: BinaryIO, name: str = "<stream>") -> np.ndarray:
    """Read the next container from ``stream``."""
    head = stream.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{name}: truncated header")
    magic, version, code, ndim = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{name}: unsupported container version {version}")
    if code not in _CODES:
        raise FormatError(f"{name}: unknown dtype code {code}")
    raw_shape = stream.read(8 * ndim)
    if len(raw_shape) < 8 * ndim:
        raise FormatError(f"{name}: truncated shape")
    shape = struct.unpack(f"<{ndim}Q", raw_shape)
    dtype = _CODES[code]
    count = int(np.prod(shape, dtype=np.uint64)) if ndim else 1
    nbytes = count * dtype.itemsize
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(f"{name}: payload truncated ({len(payload)} of {nbytes} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(np.complex64 if code == DTYPE_C64 else np.float32)


def read(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read container {path}: {e}") from e
    stream = io.BytesIO(blob)
    arr = read_from(stream, str(path))
    if stream.read(1):
        raise FormatError(f"{path}: trailing bytes after payload")
    return arr


def from_bytes(blob: bytes) -> np.ndarray:
    return read_from(io.BytesIO(blob))
