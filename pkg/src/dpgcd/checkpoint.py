"""Flat named-array checkpoint file.

Layout: ``b"DPGCKPT1"``, a u32 entry count, then per entry a u16 name
length, the UTF-8 name, a u8 rank, u32 dims and float64 little-endian data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"DPGCKPT1"


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    """Write ``state`` (and optional string metadata) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    meta_txt = "".join(f"{k}={v}\n" for k, v in sorted((meta or {}).items())).encode()
    chunks.append(struct.pack("<I", len(meta_txt)) + meta_txt)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        off = len(MAGIC)
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(shape)) * 8
            if off + size > len(buf):
                raise CheckpointError(f"{path}: truncated data for {name}")
            state[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=off).reshape(shape).copy()
            off += size
        (mlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        meta_txt = buf[off : off + mlen].decode()
        if off + mlen != len(buf):
            raise CheckpointError(f"{path}: trailing bytes")
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    meta = dict(line.split("=", 1) for line in meta_txt.splitlines() if line)
    return state, meta
