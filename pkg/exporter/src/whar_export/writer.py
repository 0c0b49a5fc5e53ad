"""Standalone writer for the engine's archive container.

The binary layout is the interface between the stacks, so it is
implemented here independently rather than imported from the engine:

    magic "WHAR" | version u32 | entry_count u32 | config_len u32 |
    config utf-8 JSON | per entry: name_len u16, name, dtype u8
    (0=f32, 1=f16), rank u8, dims u32 x rank, payload, crc32 u32

All integers little-endian; payloads row-major.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"WHAR"
VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): (0, "<f4"), np.dtype("float16"): (1, "<f2")}

F16_MAX = 65504.0


def quantize_f16(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    amax = float(np.max(np.abs(arr)))
    if amax > F16_MAX:
        raise OverflowError(f"{name}: magnitude {amax} exceeds float16 max finite")
    return arr.astype(np.float16)


def write_whar(entries: dict[str, np.ndarray], config_json: str, path) -> None:
    config_bytes = config_json.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", MAGIC, VERSION, len(entries), len(config_bytes)))
        fh.write(config_bytes)
        for name, arr in entries.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_CODES:
                raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
            code, le_dtype = _DTYPE_CODES[arr.dtype]
            if not np.all(np.isfinite(arr.astype(np.float64))):
                raise ValueError(f"{name}: payload contains NaN or Inf")
            name_bytes = name.encode("utf-8")
            payload = arr.astype(le_dtype).tobytes(order="C")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
