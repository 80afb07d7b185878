"""Single-file binary checkpoints.

Layout: the 8-byte magic "GRIDNRF1", a little-endian uint32 record count,
then per record: uint16 name length, UTF-8 name, uint8 dtype code, uint8
ndim, ndim uint32 extents, raw little-endian values. Records cover model
parameters, Adam states and scalar metadata; writers choose the names.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GRIDNRF1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_FOR_KIND = {"f4": 0, "f8": 1, "i8": 2}


class CheckpointError(RuntimeError):
    """Malformed or truncated checkpoint file."""


def _dtype_code(arr: np.ndarray) -> int:
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _CODE_FOR_KIND:
        raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
    return _CODE_FOR_KIND[key]


def save_arrays(path, records: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(records)))
        for name, arr in records.items():
            arr = np.ascontiguousarray(arr)
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", _dtype_code(arr), arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            code = _dtype_code(arr)
            f.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())
    tmp.replace(path)


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    pos = 8

    def need(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", need(4))
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(2))
        name = need(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", need(2))
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        shape = tuple(struct.unpack("<I", need(4))[0] for _ in range(ndim))
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(need(nbytes), dtype=dtype).reshape(shape)
        records[name] = arr.copy()  # writable, native layout
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return records
