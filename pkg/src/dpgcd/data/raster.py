"""Minimal binary raster container.

Layout: a 16-byte little-endian header ``"DPGR" | version u8 | dtype u8 |
channels u16 | height u32 | width u32`` followed by the channel-major,
row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"DPGR"
VERSION = 1
_HEADER = struct.Struct("<4sBBHII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


def write_raster(path, array) -> None:
    """Write a [H,W] or [C,H,W] float32/uint8 array."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"raster must be [H,W] or [C,H,W], got {arr.shape}")
    code = _CODES.get(arr.dtype)
    if code is None:
        raise DataError(f"unsupported raster dtype {arr.dtype}; use float32 or uint8")
    c, h, w = arr.shape
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, code, c, h, w))
        fh.write(payload)


def read_raster(path, squeeze: bool = True) -> np.ndarray:
    """Read a raster; single-channel rasters come back as [H,W] when ``squeeze``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read raster {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, code, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise DataError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    expected = c * h * w * dt.itemsize
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise DataError(f"{path}: payload is {len(body)} bytes, header implies {expected}")
    arr = np.frombuffer(body, dtype=dt).reshape(c, h, w).astype(dt.newbyteorder("="))
    if squeeze and c == 1:
        return arr[0]
    return arr
