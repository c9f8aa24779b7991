"""Sample pairs and the tab-separated manifest that indexes them on disk."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .depth import ingest_depth_prior
from .raster import read_raster, write_raster

RASTER_FIELDS = ("dsm_t1", "img_t2", "depth_prior", "label_2d", "delta_h")
MANIFEST_FIELDS = ("sample_id", "split", "resolution") + RASTER_FIELDS


@dataclass
class SamplePair:
    sample_id: str
    dsm_t1: np.ndarray  # [H,W] metres
    img_t2: np.ndarray  # [3,H,W] in [0,1]
    depth_prior: np.ndarray  # [H,W] relative depth
    label_2d: np.ndarray  # [H,W] uint8 class ids
    delta_h: np.ndarray  # [H,W] metres
    split: str = "train"
    resolution: float = 0.5

    @property
    def shape(self) -> tuple[int, int]:
        return self.dsm_t1.shape

    def validate(self, num_classes: int | None = None) -> None:
        h, w = self.dsm_t1.shape
        for name in RASTER_FIELDS:
            arr = getattr(self, name)
            if arr.shape[-2:] != (h, w):
                raise DataError(f"{self.sample_id}: {name} is {arr.shape[-2:]}, expected {(h, w)}")
        if num_classes is not None and int(self.label_2d.max()) >= num_classes:
            raise DataError(f"{self.sample_id}: label {int(self.label_2d.max())} >= num_classes {num_classes}")


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    split: str
    resolution: float
    dsm_t1: str
    img_t2: str
    depth_prior: str
    label_2d: str
    delta_h: str


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            writer.writerow([e.sample_id, e.split, repr(float(e.resolution))] + [getattr(e, f) for f in RASTER_FIELDS])


def read_manifest(path) -> list[ManifestEntry]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != MANIFEST_FIELDS:
        raise DataError(f"{path}: manifest header must be {MANIFEST_FIELDS}")
    out = []
    for row in rows[1:]:
        if len(row) != len(MANIFEST_FIELDS):
            raise DataError(f"{path}: malformed row {row}")
        out.append(ManifestEntry(row[0], row[1], float(row[2]), *row[3:]))
    return out


def save_samples(samples: list[SamplePair], out_dir) -> Path:
    """Write every sample's rasters under ``out_dir`` and return the manifest path."""
    out_dir = Path(out_dir)
    entries = []
    for s in samples:
        rel = {}
        for name in RASTER_FIELDS:
            rel[name] = f"rasters/{s.sample_id}_{name}.dpgr"
            arr = getattr(s, name)
            write_raster(out_dir / rel[name], arr.astype(np.uint8 if name == "label_2d" else np.float32))
        entries.append(ManifestEntry(s.sample_id, s.split, s.resolution, **rel))
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, entries)
    return manifest


def load_sample(entry: ManifestEntry, root, depth_fallback=None) -> SamplePair:
    root = Path(root)
    arrays = {}
    for name in RASTER_FIELDS:
        if name == "depth_prior":
            continue
        arrays[name] = read_raster(root / getattr(entry, name))
    if depth_fallback is not None:
        def fallback():
            return depth_fallback(arrays["dsm_t1"], arrays["delta_h"], entry.sample_id)
    else:
        fallback = None
    arrays["depth_prior"] = ingest_depth_prior(root / entry.depth_prior, fallback)
    sample = SamplePair(entry.sample_id, split=entry.split, resolution=entry.resolution, **arrays)
    sample.validate()
    return sample


def load_split(manifest_path, split: str | None = None, depth_fallback=None) -> list[SamplePair]:
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    return [
        load_sample(e, manifest_path.parent, depth_fallback) for e in entries if split is None or e.split == split
    ]
