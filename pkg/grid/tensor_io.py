"""
Binary tensor files and atomic file writes.

Layout (little-endian):
    [0:4]   magic b"NLSG"
    [4]     u8 rank
    [5]     u8 dtype code (1 = float64, 2 = uint8)
    [6:16]  zero padding
    then rank x u32 dims, then the row-major payload.
float64 payloads round-trip bit-exactly.
"""

import os
import shutil
import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from grid.errors import TensorFormatError

MAGIC = b"NLSG"
HEADER_SIZE = 16
DTYPE_F64 = 1
DTYPE_U8 = 2

_DTYPES = {DTYPE_F64: np.dtype("<f8"), DTYPE_U8: np.dtype("u1")}

PathLike = Union[str, Path]


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialise a float or small-integer array."""
    array = np.asarray(array)
    if array.dtype.kind == "f":
        code = DTYPE_F64
        payload = np.ascontiguousarray(array, dtype="<f8")
    elif array.dtype.kind in "biu":
        if array.size and (array.min() < 0 or array.max() > 255):
            raise TensorFormatError("integer tensors must fit in uint8")
        code = DTYPE_U8
        payload = np.ascontiguousarray(array, dtype="u1")
    else:
        raise TensorFormatError(f"unsupported dtype {array.dtype}")
    if array.ndim > 255:
        raise TensorFormatError(f"rank {array.ndim} exceeds 255")

    header = MAGIC + struct.pack("<BB", array.ndim, code) + bytes(HEADER_SIZE - 6)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    return header + dims + payload.tobytes(order="C")


def decode_tensor(data: bytes) -> np.ndarray:
    """Inverse of encode_tensor; raises TensorFormatError on malformed input."""
    if len(data) < HEADER_SIZE or data[:4] != MAGIC:
        raise TensorFormatError("bad magic: not an NLSG tensor")
    rank, code = struct.unpack("<BB", data[4:6])
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    dims_end = HEADER_SIZE + 4 * rank
    if len(data) < dims_end:
        raise TensorFormatError("truncated dimension block")
    shape = struct.unpack(f"<{rank}I", data[HEADER_SIZE:dims_end])
    dtype = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - dims_end != expected:
        raise TensorFormatError(f"payload has {len(data) - dims_end} bytes, expected {expected}")
    array = np.frombuffer(data, dtype=dtype, offset=dims_end).reshape(shape)
    if code == DTYPE_F64:
        return array.astype(np.float64)
    return array.copy()


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write via a sibling temp file and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_tensor(path: PathLike, array: np.ndarray) -> Path:
    return atomic_write_bytes(path, encode_tensor(array))


def read_tensor(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())


@contextmanager
def atomic_directory(path: PathLike) -> Iterator[Path]:
    """
    Build a directory under a temporary sibling name and move it into place.

    On error the partial directory is removed and any existing target is kept.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)
