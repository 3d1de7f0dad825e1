"""Little-endian checkpoint container for named parameter tensors.

Layout (all integers little-endian):
  8 bytes   magic "OCFLCKP1"
  uint32    tensor count
  per tensor:
    uint16   name length, then UTF-8 name bytes
    uint8    dtype code (0 = float32, 1 = float64)
    uint8    ndim
    uint32 * ndim   dimensions
    raw little-endian tensor data, C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"OCFLCKP1"
_DTYPES = {0: "<f4", 1: "<f8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(Exception):
    pass


def save_checkpoint(params: dict, path) -> None:
    """Write a name -> ndarray mapping; iteration order is sorted by name."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name])
            if arr.dtype not in _CODES:
                arr = arr.astype(np.float64)
            code = _CODES[arr.dtype]
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_DTYPES[code]).tobytes())


def load_checkpoint(path) -> dict:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    off = 8
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dtype = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        if off + nbytes > len(data):
            raise CheckpointError(f"truncated checkpoint {path}")
        arr = np.frombuffer(data, dtype=dtype, count=max(1, int(np.prod(shape))),
                            offset=off).reshape(shape)
        off += nbytes
        params[name] = arr.copy()
    return params
