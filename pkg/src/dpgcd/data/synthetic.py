"""Deterministic synthetic DSM + image scenes with building changes.

Each tile holds a sloped ground plane and flat-roofed rectangular buildings.
Between epochs some buildings are demolished and new ones appear. Every
height is snapped to a 1/256 m grid so that surface sums and differences
are exact in float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, GenerationError
from ..prng import Prng
from .depth import depth_proxy
from .samples import SamplePair

UNCHANGED, NEWLY_BUILT, DEMOLISHED = 0, 1, 2
QUANTUM = 1.0 / 256.0


@dataclass(frozen=True)
class SyntheticSceneConfig:
    tile_size: int = 64
    seed: int = 42
    building_count: tuple[int, int] = (3, 5)
    building_size: tuple[int, int] = (8, 16)
    height_range: tuple[float, float] = (3.0, 12.0)
    p_new: float = 0.6
    p_demolish: float = 0.5
    image_noise: float = 0.03
    depth_gamma: float = 0.8
    depth_noise: float = 0.002
    ground_slope: float = 3.0  # max ground rise across a tile, metres
    gap: int = 2
    placement_budget: int = 500
    resolution: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.p_new <= 1.0 and 0.0 <= self.p_demolish <= 1.0):
            raise ConfigurationError("change probabilities must lie in [0, 1]")
        if self.tile_size % 32:
            raise ConfigurationError(f"tile size {self.tile_size} must be divisible by 32")
        if self.building_size[1] + 2 * self.gap > self.tile_size:
            raise ConfigurationError("buildings do not fit in the tile")


def _quantize(x):
    return np.round(np.asarray(x, dtype=np.float64) / QUANTUM) * QUANTUM


@dataclass
class _Box:
    y0: int
    x0: int
    h: int
    w: int
    height: float
    roof: np.ndarray

    def slices(self):
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)


def _place(rng: Prng, cfg: SyntheticSceneConfig, occupied: np.ndarray) -> _Box:
    t = cfg.tile_size
    lo, hi = cfg.building_size
    for _ in range(cfg.placement_budget):
        bh = rng.integers(lo, hi + 1)
        bw = rng.integers(lo, hi + 1)
        y0 = rng.integers(0, t - bh + 1)
        x0 = rng.integers(0, t - bw + 1)
        g = cfg.gap
        if not occupied[max(y0 - g, 0) : y0 + bh + g, max(x0 - g, 0) : x0 + bw + g].any():
            height = float(_quantize(rng.uniform(*cfg.height_range)))
            roof = rng.uniform(0.55, 0.9, 3)
            occupied[y0 : y0 + bh, x0 : x0 + bw] = True
            return _Box(y0, x0, bh, bw, height, roof)
    raise GenerationError(f"could not place a building within {cfg.placement_budget} attempts")


def generate_tile(cfg: SyntheticSceneConfig, rng: Prng, sample_id: str, split: str = "train") -> SamplePair:
    t = cfg.tile_size
    yy, xx = np.mgrid[0:t, 0:t].astype(np.float64)
    base = rng.uniform(0.0, 5.0)
    sy, sx = rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
    ground = _quantize(base + cfg.ground_slope * 0.5 * (sy * yy + sx * xx) / t + cfg.ground_slope * 0.5)

    occupied = np.zeros((t, t), dtype=bool)
    n_t1 = rng.integers(cfg.building_count[0], cfg.building_count[1] + 1)
    t1_boxes = [_place(rng, cfg, occupied) for _ in range(n_t1)]
    n_cand = rng.integers(cfg.building_count[0], cfg.building_count[1] + 1)
    new_boxes = [_place(rng, cfg, occupied) for _ in range(n_cand) if rng.random() < cfg.p_new]
    demolished = [rng.random() < cfg.p_demolish for _ in t1_boxes]

    dsm_t1 = ground.copy()
    delta = np.zeros((t, t))
    label = np.zeros((t, t), dtype=np.uint8)
    for box in t1_boxes:
        dsm_t1[box.slices()] += box.height
    for box, gone in zip(t1_boxes, demolished):
        if gone:
            delta[box.slices()] = -box.height
            label[box.slices()] = DEMOLISHED
    for box in new_boxes:
        delta[box.slices()] = box.height
        label[box.slices()] = NEWLY_BUILT
    dsm_t1 = dsm_t1.astype(np.float32)
    delta_h = delta.astype(np.float32)
    dsm_t2 = dsm_t1 + delta_h

    ground_albedo = np.array([0.32, 0.42, 0.28]) + rng.uniform(-0.04, 0.04, 3)
    albedo = np.broadcast_to(ground_albedo[:, None, None], (3, t, t)).copy()
    for box, gone in zip(t1_boxes, demolished):
        if not gone:
            albedo[(slice(None),) + box.slices()] = box.roof[:, None, None]
    for box in new_boxes:
        albedo[(slice(None),) + box.slices()] = box.roof[:, None, None]
    gy, gx = np.gradient(dsm_t2.astype(np.float64))
    shade = 0.15 * np.tanh(-(gx + gy) / 4.0)
    noise = cfg.image_noise * rng.normal(3 * t * t).reshape(3, t, t)
    img = np.clip(albedo + shade[None] + noise, 0.0, 1.0).astype(np.float32)

    prior = depth_proxy(dsm_t2, cfg.depth_gamma, cfg.depth_noise, rng)
    return SamplePair(sample_id, dsm_t1, img, prior, label, delta_h, split, cfg.resolution)


def split_counts(n: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three nonnegative numbers summing to 1: {fractions}")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def gen_synthetic(cfg: SyntheticSceneConfig, n_tiles: int, fractions=(0.7, 0.1, 0.2)) -> list[SamplePair]:
    """Generate ``n_tiles`` tiles; tile i draws from its own stream forked from the seed."""
    n_train, n_val, _ = split_counts(n_tiles, fractions)
    root = Prng(cfg.seed)
    out = []
    for i in range(n_tiles):
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        out.append(generate_tile(cfg, root.fork(i), f"syn{cfg.seed}_{i:05d}", split))
    return out
