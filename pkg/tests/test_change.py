import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpgcd.autodiff import ParamStore, Tensor, backward, ops
from dpgcd.change import CCA, CCAB, DSSM, HCFEB, ChangeConfig, ChangeExtractor, PlainConvFusion, to_map, to_tokens
from dpgcd.encoder import FeaturePyramid
from dpgcd.errors import ConfigurationError, DimensionError, NumericError

from oracles import naive_scan, random_scan_inputs


def run_scan(*arrays):
    return ops.scan(*(Tensor(a) for a in arrays)).data


class TestScan:
    def test_matches_naive_recurrence(self, rng):
        args = random_scan_inputs(rng, 64, 6, 8)
        assert np.max(np.abs(run_scan(*args) - naive_scan(*args))) < 1e-10

    def test_single_step_closed_form(self, rng):
        u, delta, a, b, c = random_scan_inputs(rng, 1, 3, 4)
        y = run_scan(u, delta, a, b, c)
        ref = (c[0] @ b[0]) * delta[0] * u[0]
        assert np.allclose(y[0], ref, atol=1e-14)

    def test_zero_input_gives_zero(self, rng):
        _, delta, a, b, c = random_scan_inputs(rng, 10, 3, 4)
        assert np.array_equal(run_scan(np.zeros((10, 3)), delta, a, b, c), np.zeros((10, 3)))

    def test_state_decays_once_input_stops(self, rng):
        u, delta, a, b, _ = random_scan_inputs(rng, 40, 3, 5)
        u[10:] = 0.0
        h = np.zeros((3, 5))
        norms = []
        for t in range(40):
            h = np.exp(delta[t][:, None] * a) * h + (delta[t] * u[t])[:, None] * b[t][None]
            norms.append(np.linalg.norm(h, axis=1))
        tail = np.array(norms[10:])
        assert np.all(np.diff(tail, axis=0) <= 1e-15)

    def test_non_finite_state_reports_position(self, rng):
        u, delta, a, b, c = random_scan_inputs(rng, 5, 2, 3)
        u[3, 1] = np.inf
        with pytest.raises(NumericError, match="step 3, channel 1"):
            run_scan(u, delta, a, b, c)


def small_store(seed=0):
    return ParamStore(seed=seed, dtype=np.float64)


class TestCCAB:
    def setup_method(self):
        self.store = small_store()
        self.blk = CCAB(self.store, "ccab", 4)
        rng = np.random.default_rng(5)
        self.fd = Tensor(rng.normal(size=(4, 6, 6)))
        self.fi = Tensor(rng.normal(size=(4, 6, 6)))

    def test_channel_weights_in_open_interval(self):
        _, a = self.blk.block(self.fd, self.fi)
        assert np.all((a.data > 0) & (a.data < 1))

    def test_closed_gate_leaves_residual(self):
        self.blk.w2.weight.data[:] = 0.0
        self.blk.w2.bias.data[:] = -60.0
        out, _ = self.blk.block(self.fd, self.fi)
        x = np.concatenate([self.fd.data, self.fi.data])
        assert np.allclose(out.data, x, atol=1e-20)

    def test_input_order_matters(self):
        assert not np.allclose(self.blk(self.fd, self.fi).data, self.blk(self.fi, self.fd).data)

    def test_shape_and_mismatch(self):
        assert self.blk(self.fd, self.fi).shape == (4, 6, 6)
        with pytest.raises(DimensionError):
            self.blk(self.fd, Tensor(np.zeros((4, 5, 6))))

    def test_reduction_must_divide(self):
        with pytest.raises(ConfigurationError):
            CCAB(small_store(), "bad", 3, reduction=4)


class TestDSSM:
    def setup_method(self):
        self.store = small_store(1)
        self.blk = DSSM(self.store, "dssm", 3, ChangeConfig(d_state=4))
        rng = np.random.default_rng(9)
        self.fd = Tensor(rng.normal(size=(3, 4, 5)))
        self.fi = Tensor(rng.normal(size=(3, 4, 5)))

    def test_output_shape(self):
        assert self.blk(self.fd, self.fi).shape == (20, 6)

    def test_state_matrix_negative_and_step_positive(self):
        assert np.all(self.blk.a_matrix().data < 0)
        self.blk.a_log.data[:] = np.random.default_rng(0).normal(scale=5, size=self.blk.a_log.shape)
        assert np.all(self.blk.a_matrix().data < 0)
        s = Tensor(np.random.default_rng(1).normal(scale=30, size=(7, self.blk.d_inner)))
        assert np.all(ops.softplus(self.blk.dt_proj(s)).data > 0)

    def test_initial_step_size(self):
        s = Tensor(np.zeros((2, self.blk.d_inner)))
        assert np.allclose(ops.softplus(self.blk.dt_proj(s)).data, 0.1)

    def test_equal_inputs_zero_difference_branch(self):
        self.blk.diff_conv_b.data[:] = 0.0
        self.blk.diff_proj.bias.data[:] = 0.0
        d = self.blk.diff_branch(to_tokens(self.fd - self.fd))
        assert np.array_equal(d.data, np.zeros_like(d.data))
        out = self.blk(self.fd, self.fd)
        s = self.blk.selective_scan(self.blk.main_branch(to_tokens(ops.concat([self.fd, self.fd], axis=0))))
        ref = self.blk.out_proj(ops.concat([s, Tensor(np.zeros_like(s.data))], axis=1))
        assert np.allclose(out.data, ref.data, atol=1e-14)

    @given(st.floats(-100, 100))
    def test_difference_branch_translation_invariant(self, c):
        base = self.blk.diff_branch(to_tokens(self.fi - self.fd)).data
        shifted = self.blk.diff_branch(to_tokens((self.fi + c) - (self.fd + c))).data
        assert np.allclose(base, shifted, atol=1e-9)

    def test_scan_matches_naive_inside_module(self):
        s = self.blk.main_branch(to_tokens(ops.concat([self.fd, self.fi], axis=0)))
        y = self.blk.selective_scan(s).data
        delta = ops.softplus(self.blk.dt_proj(s)).data
        ref = naive_scan(s.data, delta, self.blk.a_matrix().data, self.blk.b_proj(s).data, self.blk.c_proj(s).data)
        assert np.max(np.abs(y - ref)) < 1e-10


class TestCCA:
    def setup_method(self):
        self.store = small_store(2)
        self.blk = CCA(self.store, "cca", 8, heads=4)
        self.x = Tensor(np.random.default_rng(3).normal(size=(12, 8)))

    def test_attention_rows_sum_to_one(self):
        _, attn = self.blk.attention(self.x)
        assert attn.shape == (4, 2, 2)
        assert np.allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)

    @given(st.permutations(list(range(12))))
    def test_spatial_permutation_equivariance(self, perm):
        perm = np.array(perm)
        out = self.blk(self.x).data
        out_p = self.blk(Tensor(self.x.data[perm])).data
        assert np.max(np.abs(out_p - out[perm])) < 1e-10

    def test_zero_input_zero_bias(self):
        for p in self.store:
            if p.name.endswith("bias"):
                p.data[:] = 0.0
        assert np.array_equal(self.blk(Tensor(np.zeros((5, 8)))).data, np.zeros((5, 8)))

    def test_heads_must_divide(self):
        with pytest.raises(ConfigurationError):
            CCA(small_store(), "bad", 6, heads=4)

    def test_matches_dense_reference(self):
        """Per-head channel attention written out with plain numpy."""
        x = self.x.data
        qkv = x @ self.blk.qkv.weight.data + self.blk.qkv.bias.data
        q, k, v = np.split(qkv, 3, axis=1)
        outs = []
        for h in range(4):
            sl = slice(2 * h, 2 * h + 2)
            s = q[:, sl].T @ k[:, sl] / np.sqrt(2)
            a = np.exp(s - s.max(axis=1, keepdims=True))
            a /= a.sum(axis=1, keepdims=True)
            outs.append((a @ v[:, sl].T).T)
        ref = x + np.concatenate(outs, axis=1) @ self.blk.proj.weight.data + self.blk.proj.bias.data
        assert np.allclose(self.blk(self.x).data, ref, atol=1e-12)


class TestHCFEB:
    def setup_method(self):
        self.store = small_store(3)
        self.blk = HCFEB(self.store, "h", 4, ChangeConfig(d_state=4, heads=2))
        rng = np.random.default_rng(11)
        self.fd = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)
        self.fi = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)

    def test_shape(self):
        assert self.blk(self.fd, self.fi).shape == (4, 3, 5)

    def test_zeroed_projections_are_pure_residual(self):
        for mod in (self.blk.mixer.out_proj, self.blk.mlp1.fc2, self.blk.cca.proj, self.blk.mlp2.fc2):
            mod.weight.data[:] = 0.0
            mod.bias.data[:] = 0.0
        z = self.blk.tokens(self.fd, self.fi).data
        x = to_tokens(ops.concat([self.fd, self.fi], axis=0)).data
        assert np.array_equal(z, x)

    def test_gradient_reaches_both_inputs(self):
        backward(ops.sum(ops.square(self.blk(self.fd, self.fi))))
        assert np.linalg.norm(self.fd.grad) > 0 and np.linalg.norm(self.fi.grad) > 0

    def test_token_round_trip(self):
        f = np.arange(24.0).reshape(2, 3, 4)
        assert np.array_equal(to_map(to_tokens(Tensor(f)), 3, 4).data, f)


class TestChangeExtractor:
    def _pyramids(self, chans, seed):
        rng = np.random.default_rng(seed)
        sizes = (8, 4, 2, 1)
        mk = lambda: FeaturePyramid([Tensor(rng.normal(size=(c, s, s))) for c, s in zip(chans, sizes)])  # noqa: E731
        return mk(), mk()

    def test_four_levels_and_level_independence(self):
        chans = [4, 8, 8, 8]
        ext = ChangeExtractor(small_store(4), chans, ChangeConfig(d_state=4, heads=2))
        dsm, img = self._pyramids(chans, 0)
        out = ext.change_pyramid(dsm, img)
        assert [o.shape for o in out] == [(4, 8, 8), (8, 4, 4), (8, 2, 2), (8, 1, 1)]
        img.levels[1] = Tensor(img.levels[1].data + 1.0)
        out2 = ext.change_pyramid(dsm, img)
        for i in (0, 2, 3):
            assert np.array_equal(out[i].data, out2[i].data)
        assert not np.allclose(out[1].data, out2[1].data)

    def test_ablation_routing(self):
        chans = [4, 8, 8, 8]
        ext = ChangeExtractor(small_store(4), chans, ChangeConfig(d_state=4, heads=2, use_ccab=False, use_dssm=False, use_cca=False))
        assert isinstance(ext.level1, PlainConvFusion)
        assert all(not isinstance(b.mixer, DSSM) and b.cca is None for b in ext.deep)
        dsm, img = self._pyramids(chans, 1)
        assert [o.shape[0] for o in ext(dsm, img)] == chans
