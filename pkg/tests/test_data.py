import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import spearmanr

from dpgcd.data import (
    ManifestEntry,
    SyntheticSceneConfig,
    gen_synthetic,
    ingest_depth_prior,
    load_split,
    read_manifest,
    read_raster,
    save_samples,
    tile_array,
    tile_manifest,
    tile_windows,
    untile,
    write_manifest,
    write_raster,
)
from dpgcd.data.synthetic import DEMOLISHED, NEWLY_BUILT, QUANTUM, UNCHANGED, split_counts
from dpgcd.errors import ConfigurationError, DataError
from dpgcd.losses import derive_dsm_gt

SMALL = SyntheticSceneConfig(tile_size=32, building_count=(1, 2), building_size=(6, 10))


class TestRaster:
    @pytest.mark.parametrize("dtype", [np.float32, np.uint8])
    @pytest.mark.parametrize("shape", [(5, 7), (3, 4, 6)])
    def test_round_trip(self, tmp_path, rng, dtype, shape):
        arr = (rng.random(shape) * 200).astype(dtype)
        write_raster(tmp_path / "a.dpgr", arr)
        back = read_raster(tmp_path / "a.dpgr")
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_rejects_other_dtypes(self, tmp_path):
        with pytest.raises(DataError):
            write_raster(tmp_path / "a.dpgr", np.zeros((2, 2), np.float64))

    def test_corruption(self, tmp_path):
        p = tmp_path / "a.dpgr"
        write_raster(p, np.ones((4, 4), np.float32))
        raw = p.read_bytes()
        p.write_bytes(raw[:-1])
        with pytest.raises(DataError, match="payload"):
            read_raster(p)
        p.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(DataError, match="magic"):
            read_raster(p)
        p.write_bytes(raw[:8])
        with pytest.raises(DataError, match="truncated"):
            read_raster(p)
        with pytest.raises(DataError):
            read_raster(tmp_path / "missing.dpgr")


class TestManifest:
    def test_round_trip(self, tmp_path):
        e = ManifestEntry("s1", "test", 0.5, "a", "b", "c", "d", "e")
        write_manifest(tmp_path / "m.tsv", [e])
        assert read_manifest(tmp_path / "m.tsv") == [e]

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.tsv").write_text("id\tsplit\n")
        with pytest.raises(DataError):
            read_manifest(tmp_path / "m.tsv")

    def test_samples_round_trip(self, tmp_path):
        samples = gen_synthetic(replace(SMALL, seed=3), 4, (0.5, 0.25, 0.25))
        manifest = save_samples(samples, tmp_path)
        loaded = load_split(manifest)
        assert [s.sample_id for s in loaded] == [s.sample_id for s in samples]
        for a, b in zip(samples, loaded):
            for name in ("dsm_t1", "img_t2", "depth_prior", "delta_h"):
                np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
            np.testing.assert_array_equal(a.label_2d, b.label_2d)
        assert [s.split for s in load_split(manifest, "val")] == ["val"]

    def test_depth_fallback(self, tmp_path):
        samples = gen_synthetic(SMALL, 1)
        manifest = save_samples(samples, tmp_path)
        (tmp_path / read_manifest(manifest)[0].depth_prior).unlink()
        with pytest.raises(DataError, match="no fallback"):
            load_split(manifest)
        loaded = load_split(manifest, depth_fallback=lambda dsm, dh, sid: np.full(dsm.shape, 0.25))
        assert loaded[0].depth_prior.dtype == np.float32 and np.all(loaded[0].depth_prior == 0.25)

    def test_depth_must_be_single_channel(self, tmp_path):
        write_raster(tmp_path / "d.dpgr", np.zeros((2, 4, 4), np.float32))
        with pytest.raises(DataError):
            ingest_depth_prior(tmp_path / "d.dpgr")


@pytest.fixture(scope="module")
def default_tiles():
    return gen_synthetic(SyntheticSceneConfig(seed=42), 40)


class TestSynthetic:
    def test_deterministic(self, default_tiles):
        again = gen_synthetic(SyntheticSceneConfig(seed=42), 3)
        for a, b in zip(default_tiles[:3], again):
            assert a.sample_id == b.sample_id
            for name in ("dsm_t1", "img_t2", "depth_prior", "label_2d", "delta_h"):
                assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_seeds_differ(self, default_tiles):
        other = gen_synthetic(SyntheticSceneConfig(seed=43), 1)[0]
        assert not np.array_equal(other.dsm_t1, default_tiles[0].dsm_t1)

    def test_prefix_stable(self, default_tiles):
        # tile i does not depend on how many tiles were requested
        short = gen_synthetic(SyntheticSceneConfig(seed=42), 2)
        assert short[1].dsm_t1.tobytes() == default_tiles[1].dsm_t1.tobytes()

    def test_label_height_consistency(self, default_tiles):
        for s in default_tiles:
            lab, dh = s.label_2d, s.delta_h
            assert s.dsm_t1.dtype == np.float32 and s.img_t2.shape == (3, 64, 64)
            assert np.all(dh[lab == UNCHANGED] == 0)
            assert np.all(dh[lab == NEWLY_BUILT] > 0)
            assert np.all(dh[lab == DEMOLISHED] < 0)
            dsm_t2 = derive_dsm_gt(s.dsm_t1, dh)
            # demolished buildings leave bare ground behind
            assert np.all(dsm_t2[lab == DEMOLISHED] < s.dsm_t1[lab == DEMOLISHED])
            assert np.all(np.round(dsm_t2 / QUANTUM) * QUANTUM == dsm_t2)
            assert 0.0 <= s.img_t2.min() and s.img_t2.max() <= 1.0

    def test_all_classes_present(self, default_tiles):
        labels = np.concatenate([s.label_2d.ravel() for s in default_tiles])
        frac = np.bincount(labels, minlength=3) / labels.size
        assert np.all(frac > 0.03)

    def test_no_change_probabilities(self):
        cfg = SyntheticSceneConfig(p_new=0.0, p_demolish=0.0, seed=9)
        for s in gen_synthetic(cfg, 5):
            assert not s.label_2d.any() and not s.delta_h.any()

    def test_depth_prior_tracks_surface(self, default_tiles):
        rhos = [spearmanr(s.depth_prior.ravel(), derive_dsm_gt(s.dsm_t1, s.delta_h).ravel())[0] for s in default_tiles]
        assert np.mean(rhos) > 0.9

    def test_splits(self):
        samples = gen_synthetic(SMALL, 10)
        assert [s.split for s in samples] == ["train"] * 7 + ["val"] + ["test"] * 2
        assert split_counts(250, (0.8, 0.0, 0.2)) == (200, 0, 50)
        with pytest.raises(ConfigurationError):
            split_counts(10, (0.5, 0.5, 0.5))

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            SyntheticSceneConfig(p_new=1.5)
        with pytest.raises(ConfigurationError):
            SyntheticSceneConfig(tile_size=48)


class TestTiling:
    def test_exact_grid(self):
        wins = tile_windows(1024, 1024, 512)
        assert [(w.row, w.col, w.y0, w.x0) for w in wins] == [(0, 0, 0, 0), (0, 1, 0, 512), (1, 0, 512, 0), (1, 1, 512, 512)]

    def test_remainder_dropped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            wins = tile_windows(1000, 1000, 512)
        assert len(wins) == 1 and "dropping 488" in caplog.text

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            tile_windows(64, 64, 48)
        with pytest.raises(DataError):
            tile_windows(16, 64, 32)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
    def test_untile_inverts_tiling(self, ny, nx, c):
        size = 32
        arr = np.arange(c * ny * nx * size * size, dtype=np.float32).reshape(c, ny * size, nx * size)
        tiles = tile_array(arr, size)
        assert len(tiles) == ny * nx
        np.testing.assert_array_equal(untile(tiles, ny * size, nx * size), arr)

    def test_stride_overlap(self):
        assert len(tile_windows(96, 64, 64, stride=32)) == 2

    def test_tile_manifest(self, tmp_path):
        samples = gen_synthetic(SyntheticSceneConfig(tile_size=64), 2)
        manifest = save_samples(samples, tmp_path / "big")
        out = tile_manifest(manifest, 32, out_dir=tmp_path / "small")
        tiles = load_split(out)
        assert len(tiles) == 8 and tiles[1].sample_id == samples[0].sample_id + "_r000c001"
        np.testing.assert_array_equal(tiles[1].dsm_t1, samples[0].dsm_t1[:32, 32:])
        np.testing.assert_array_equal(tiles[2].img_t2, samples[0].img_t2[:, 32:, :32])
