from .depth import depth_proxy, ingest_depth_prior
from .raster import read_raster, write_raster
from .samples import ManifestEntry, SamplePair, load_split, read_manifest, save_samples, write_manifest
from .synthetic import SyntheticSceneConfig, gen_synthetic, generate_tile
from .tiling import tile_array, tile_manifest, tile_sample, tile_windows, untile

__all__ = [
    "ManifestEntry",
    "SamplePair",
    "SyntheticSceneConfig",
    "depth_proxy",
    "gen_synthetic",
    "generate_tile",
    "ingest_depth_prior",
    "load_split",
    "read_manifest",
    "read_raster",
    "save_samples",
    "tile_array",
    "tile_manifest",
    "tile_sample",
    "tile_windows",
    "untile",
    "write_manifest",
    "write_raster",
]
