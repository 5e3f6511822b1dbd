"""Binary checkpoint files.

Layout (all integers little-endian):

    magic   4 bytes  b"ENCK"
    version u8       currently 1
    cfg_len u32      length of a UTF-8 JSON config blob
    config  cfg_len bytes
    count   u32      number of named arrays
    then per array:
        name_len u16, name (UTF-8)
        dtype    u8   0 = float32, 1 = float64, 2 = int64
        ndim     u8
        dims     u32 x ndim
        data     raw little-endian values

Loading validates array shapes against the expectations the caller supplies.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import IncompatibleModelError

MAGIC = b"ENCK"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        blob = json.dumps(config, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise ValueError(f"{name}: unsupported checkpoint dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise IncompatibleModelError(f"{path}: not a checkpoint file (bad magic)")
    off = 4
    (version,) = struct.unpack_from("<B", raw, off)
    off += 1
    if version != VERSION:
        raise IncompatibleModelError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config = json.loads(raw[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        dims = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if off + nbytes > len(raw):
            raise IncompatibleModelError(f"{path}: truncated checkpoint at array '{name}'")
        arrays[name] = np.frombuffer(raw[off : off + nbytes], dtype=dtype).reshape(dims).copy()
        off += nbytes
    return config, arrays


def assign_arrays(params, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy checkpoint arrays into parameters by name, validating shapes."""
    for p in params:
        key = prefix + p.name
        if key not in arrays:
            raise IncompatibleModelError(f"checkpoint is missing parameter '{key}'")
        arr = arrays[key]
        if arr.shape != p.data.shape:
            raise IncompatibleModelError(
                f"checkpoint parameter '{key}' has shape {arr.shape}, expected {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)
