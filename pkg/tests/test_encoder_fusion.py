import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpgcd.autodiff import ParamStore, Tensor, backward, ops
from dpgcd.encoder import Encoder, EncoderConfig, FeaturePyramid, normalize_raster_to_gray
from dpgcd.errors import ConfigurationError, DataError, DimensionError
from dpgcd.fusion import DepthFusion


def store(seed=0):
    return ParamStore(seed=seed, dtype=np.float64)


class TestNormalize:
    def test_min_max(self):
        out = normalize_raster_to_gray(np.array([[0.0, 5.0, 10.0]]), replicate=False)
        assert out.data.tolist() == [[[0.0, 0.5, 1.0]]]

    def test_constant_is_zero(self):
        assert np.array_equal(normalize_raster_to_gray(np.full((4, 4), 3.3)).data, np.zeros((3, 4, 4)))

    def test_full_range_unit_input_unchanged(self, rng):
        r = rng.uniform(size=(5, 5))
        r[0, 0], r[1, 1] = 0.0, 1.0
        assert np.array_equal(normalize_raster_to_gray(r, replicate=False).data[0], r)

    def test_all_nan(self):
        with pytest.raises(DataError):
            normalize_raster_to_gray(np.full((3, 3), np.nan))

    def test_replicates_to_three_channels(self, rng):
        out = normalize_raster_to_gray(rng.normal(size=(4, 6))).data
        assert out.shape == (3, 4, 6) and np.array_equal(out[0], out[2])


class TestEncoder:
    def test_pyramid_shapes(self):
        enc = Encoder(store(), EncoderConfig(stem_channels=16, blocks_per_stage=1))
        pyr = enc(Tensor(np.random.default_rng(0).normal(size=(3, 64, 64))))
        assert pyr.shapes == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]

    @given(st.integers(1, 3), st.integers(1, 3))
    def test_shape_contract(self, a, b):
        enc = Encoder(store(), EncoderConfig(stem_channels=2, blocks_per_stage=1))
        pyr = enc(Tensor(np.ones((3, 32 * a, 32 * b))))
        for i, f in enumerate(pyr):
            assert f.shape == (2 * 2**i, 8 * a // 2**i, 8 * b // 2**i)

    def test_indivisible_extent(self):
        enc = Encoder(store(), EncoderConfig(stem_channels=2, blocks_per_stage=1))
        with pytest.raises(ConfigurationError):
            enc(Tensor(np.ones((3, 48, 64))))

    def test_deterministic(self, rng):
        enc = Encoder(store(), EncoderConfig(stem_channels=4, blocks_per_stage=1))
        x = Tensor(rng.normal(size=(3, 32, 32)))
        assert all(np.array_equal(a.data, b.data) for a, b in zip(enc(x), enc(x)))

    def test_weights_are_shared_between_modalities(self, rng):
        st_ = store()
        enc = Encoder(st_, EncoderConfig(stem_channels=4, blocks_per_stage=1))
        img, dsm = Tensor(rng.normal(size=(3, 32, 32))), Tensor(rng.normal(size=(3, 32, 32)))
        before = [enc(img)[2].data.copy(), enc(dsm)[2].data.copy()]
        st_["encoder.stem.conv.weight"].data[0, 0, 2, 2] += 0.5
        after = [enc(img)[2].data, enc(dsm)[2].data]
        assert not np.allclose(before[0], after[0]) and not np.allclose(before[1], after[1])

    def test_frozen_path(self, rng):
        st_ = store()
        enc = Encoder(st_, EncoderConfig(stem_channels=4, blocks_per_stage=1))
        d = Tensor(rng.normal(size=(3, 32, 32)))
        assert all(np.array_equal(a.data, b.data) for a, b in zip(enc.encode_frozen(d), enc.encode(d)))
        frozen = enc.encode_frozen(d)
        w = Tensor(rng.normal(size=(4, 8, 8)), requires_grad=True)
        grads = backward(ops.sum(frozen[0] * w), list(st_))
        assert all(not g.any() for g in grads.values())

    def test_mixed_frozen_and_live_paths(self, rng):
        st_ = store()
        enc = Encoder(st_, EncoderConfig(stem_channels=4, blocks_per_stage=1))
        x, d = Tensor(rng.normal(size=(3, 32, 32))), Tensor(rng.normal(size=(3, 32, 32)))
        proj = rng.normal(size=(4, 8, 8))

        mixed = backward(ops.sum((enc(x)[0] + enc.encode_frozen(d)[0]) * proj), list(st_))
        live = backward(ops.sum((enc(x)[0] + Tensor(enc(d)[0].data)) * proj), list(st_))
        for name in mixed:
            assert np.allclose(mixed[name], live[name], atol=1e-12), name

    def test_pyramid_level_count(self):
        with pytest.raises(DimensionError):
            FeaturePyramid([Tensor(np.ones((1, 2, 2)))] * 3)


class TestDepthFusion:
    def setup_method(self):
        self.store = store(7)
        self.fusion = DepthFusion(self.store, [4, 4, 4, 4])
        rng = np.random.default_rng(2)
        self.f_img = Tensor(rng.normal(size=(4, 5, 5)))
        self.f_edm = Tensor(rng.normal(size=(4, 5, 5)))
        self.lvl = self.fusion.levels[0]

    def test_identity_transform(self):
        for conv in (self.lvl.t_img, self.lvl.t_edm):
            conv.weight.data[:] = 0.0
            conv.weight.data[np.arange(4), np.arange(4), 1, 1] = 1.0
            conv.bias.data[:] = 0.0
        ti, te = self.fusion.transform_level(0, self.f_img, self.f_edm)
        assert np.array_equal(ti.data, self.f_img.data) and np.array_equal(te.data, self.f_edm.data)

    def test_transforms_have_separate_weights(self):
        _, te = self.fusion.transform_level(0, self.f_img, self.f_edm)
        self.lvl.t_img.weight.data += 1.0
        assert np.array_equal(self.fusion.transform_level(0, self.f_img, self.f_edm)[1].data, te.data)

    def test_gate_half_and_saturated(self):
        ti, te = self.fusion.transform_level(0, self.f_img, self.f_edm)
        for p in self.store.with_prefix("fusion.level1.gate.conv"):
            p.data[:] = 0.0
        assert np.allclose(self.fusion.gate_map(0, ti, te).data, 0.5)
        self.lvl.gate_conv2.bias.data[:] = 20.0
        m = self.fusion.gate_map(0, ti, te).data
        assert m.shape == (1, 5, 5) and np.all(m >= 1 - 1e-8)

    @given(st.integers(0, 10_000))
    def test_gate_codomain(self, seed):
        rng = np.random.default_rng(seed)
        ti, te = Tensor(rng.normal(scale=3, size=(4, 5, 5))), Tensor(rng.normal(scale=3, size=(4, 5, 5)))
        m = self.fusion.gate_map(0, ti, te).data
        assert m.min() > 0 and m.max() < 1

    @given(st.integers(0, 10_000))
    def test_zero_depth_neutrality(self, seed):
        self.lvl.t_edm.bias.data[:] = 0.0
        zero = Tensor(np.zeros((4, 5, 5)))
        ref = self.fusion.fuse_level(0, self.f_img, zero).data
        rng = np.random.default_rng(seed)
        for p in self.store.with_prefix("fusion.level1.gate"):
            p.data[:] = rng.normal(size=p.shape)
        assert np.array_equal(self.fusion.fuse_level(0, self.f_img, zero).data, ref)

    def test_zero_refine_is_residual_identity(self):
        self.lvl.refine_conv.weight.data[:] = 0.0
        assert np.array_equal(self.fusion.fuse_level(0, self.f_img, self.f_edm).data, self.f_img.data)

    def test_saturated_gate_matches_ungated_sum(self):
        self.lvl.gate_conv2.weight.data[:] = 0.0
        self.lvl.gate_conv2.bias.data[:] = 40.0
        ti, te = self.fusion.transform_level(0, self.f_img, self.f_edm)
        ref = self.lvl.refine(ti + te).data + self.f_img.data
        assert np.allclose(self.fusion.fuse_level(0, self.f_img, self.f_edm).data, ref, atol=1e-12)

    def test_gradient_reaches_both_transforms(self):
        out = self.fusion.fuse_level(0, self.f_img, self.f_edm)
        grads = backward(ops.sum(ops.square(out)), list(self.store))
        assert np.linalg.norm(grads["fusion.level1.t_img.weight"]) > 0
        assert np.linalg.norm(grads["fusion.level1.t_edm.weight"]) > 0

    def test_pyramid_level_independence_and_disable(self, rng):
        fusion = DepthFusion(store(1), [2, 3, 4, 5])
        mk = lambda: FeaturePyramid([Tensor(rng.normal(size=(c, s, s))) for c, s in zip([2, 3, 4, 5], (8, 4, 2, 1))])  # noqa: E731
        img, edm = mk(), mk()
        out = fusion.fuse_pyramid(img, edm)
        assert out.shapes == img.shapes
        edm.levels[1] = Tensor(edm.levels[1].data * 2)
        out2 = fusion.fuse_pyramid(img, edm)
        assert all(np.array_equal(out[i].data, out2[i].data) for i in (0, 2, 3))
        off = DepthFusion(store(1), [2, 3, 4, 5], enabled=False)
        assert off.fuse_pyramid(img, edm) is img

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            self.fusion.fuse_level(0, self.f_img, Tensor(np.zeros((4, 4, 5))))
