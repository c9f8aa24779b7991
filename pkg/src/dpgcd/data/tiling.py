"""Grid tiling of co-registered raster sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, DataError
from .raster import read_raster
from .samples import RASTER_FIELDS, SamplePair, read_manifest, save_samples

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TileWindow:
    row: int
    col: int
    y0: int
    x0: int
    size: int

    def cut(self, arr: np.ndarray) -> np.ndarray:
        return arr[..., self.y0 : self.y0 + self.size, self.x0 : self.x0 + self.size]


def tile_windows(height: int, width: int, size: int, stride: int | None = None) -> list[TileWindow]:
    """Row-major windows; trailing rows/columns that do not fill a tile are dropped."""
    if size <= 0 or size % 32:
        raise ConfigurationError(f"tile size {size} must be a positive multiple of 32")
    stride = size if stride is None else stride
    if stride <= 0:
        raise ConfigurationError(f"stride must be positive, got {stride}")
    if height < size or width < size:
        raise DataError(f"raster {height}x{width} is smaller than tile size {size}")
    ys = range(0, height - size + 1, stride)
    xs = range(0, width - size + 1, stride)
    rem_y = height - (ys[-1] + size)
    rem_x = width - (xs[-1] + size)
    if rem_y or rem_x:
        log.warning("tiling %dx%d by %d: dropping %d bottom rows and %d right columns", height, width, size, rem_y, rem_x)
    return [TileWindow(i, j, y, x, size) for i, y in enumerate(ys) for j, x in enumerate(xs)]


def tile_array(arr: np.ndarray, size: int, stride: int | None = None) -> list[np.ndarray]:
    h, w = arr.shape[-2:]
    return [win.cut(arr) for win in tile_windows(h, w, size, stride)]


def untile(tiles: list[np.ndarray], height: int, width: int) -> np.ndarray:
    """Reassemble a non-overlapping, remainder-free grid."""
    size = tiles[0].shape[-1]
    if height % size or width % size:
        raise DataError("untile needs extents that are multiples of the tile size")
    out = np.empty(tiles[0].shape[:-2] + (height, width), dtype=tiles[0].dtype)
    for win, t in zip(tile_windows(height, width, size), tiles, strict=True):
        out[..., win.y0 : win.y0 + size, win.x0 : win.x0 + size] = t
    return out


def tile_sample(sample: SamplePair, size: int, stride: int | None = None) -> list[SamplePair]:
    h, w = sample.shape
    out = []
    for win in tile_windows(h, w, size, stride):
        fields = {name: np.ascontiguousarray(win.cut(getattr(sample, name))) for name in RASTER_FIELDS}
        tid = f"{sample.sample_id}_r{win.row:03d}c{win.col:03d}"
        out.append(SamplePair(tid, split=sample.split, resolution=sample.resolution, **fields))
    return out


def tile_manifest(manifest_path, size: int, stride: int | None = None, out_dir=None) -> Path:
    """Tile every sample of a manifest and write a new manifest next to the tiles."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    out_dir = Path(out_dir) if out_dir is not None else root / f"tiles_{size}"
    tiles = []
    for e in read_manifest(manifest_path):
        arrays = {name: read_raster(root / getattr(e, name)) for name in RASTER_FIELDS}
        sample = SamplePair(e.sample_id, split=e.split, resolution=e.resolution, **arrays)
        sample.validate()
        tiles.extend(tile_sample(sample, size, stride))
    return save_samples(tiles, out_dir)
