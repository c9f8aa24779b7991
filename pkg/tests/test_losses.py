import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpgcd.autodiff import Tensor, backward
from dpgcd.errors import ConfigurationError, DataError, DimensionError, NumericError
from dpgcd.losses import ChangeMask, LossConfig, derive_dsm_gt, grad_loss, mse, total_loss, weighted_ce

finite = st.floats(-1e3, 1e3, allow_nan=False)


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


class TestWeightedCE:
    def test_uniform_logits(self):
        assert weighted_ce(t(np.zeros((2, 3, 3))), np.zeros((3, 3), int), (1, 1)).item() == pytest.approx(math.log(2))

    def test_saturated_correct_class(self):
        logits = np.zeros((2, 1, 1))
        logits[1] = 200.0
        assert weighted_ce(t(logits), np.ones((1, 1), int), (1, 1)).item() < 1e-80

    def test_two_pixel_hand_value(self):
        loss = weighted_ce(t(np.zeros((2, 1, 2))), np.array([[0, 1]]), (0.05, 0.95))
        assert loss.item() == pytest.approx(0.5 * math.log(2), abs=1e-15)

    def test_label_range(self):
        with pytest.raises(DataError):
            weighted_ce(t(np.zeros((2, 2, 2))), np.full((2, 2), 2), (1, 1))

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=8, unique=True))
    def test_monotone_in_true_logit(self, values):
        values = sorted(values)
        losses = []
        for v in values:
            logits = np.array([[[v]], [[0.3]], [[-0.2]]])
            losses.append(weighted_ce(t(logits), np.zeros((1, 1), int), (0.05, 0.95, 0.95)).item())
        assert all(a >= b for a, b in zip(losses, losses[1:]))


class TestMSE:
    def test_examples(self, rng):
        g = rng.normal(size=(1, 4, 4))
        assert mse(t(g), g).item() == 0.0
        assert mse(t(g + 2), g).item() == pytest.approx(4.0)
        assert mse(t([1.0, 3.0]), np.zeros(2)).item() == 5.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse(t(np.zeros((1, 3, 3))), np.zeros((1, 3, 4)))


class TestGradLoss:
    def test_examples(self, rng):
        g = rng.normal(size=(1, 5, 5))
        m = ChangeMask(rng.random((5, 5)) < 0.5)
        assert grad_loss(t(g), g, m).item() == 0.0
        assert grad_loss(t(g + 7.5), g, m).item() == pytest.approx(0.0, abs=1e-12)
        hand = grad_loss(t([[[0.0, 3.0]]]), np.array([[[0.0, 1.0]]]), ChangeMask(np.array([[True, False]])))
        assert hand.item() == 2.0

    def test_empty_mask_is_zero(self, rng):
        assert grad_loss(t(rng.normal(size=(1, 4, 4))), np.zeros((1, 4, 4)), ChangeMask(np.zeros((4, 4), bool))).item() == 0.0

    def test_matches_pixel_loop(self, rng):
        p, g = rng.normal(size=(1, 6, 7)), rng.normal(size=(1, 6, 7))
        m = rng.random((6, 7)) < 0.4
        total = 0.0
        for i in range(6):
            for j in range(7):
                if not m[i, j]:
                    continue
                if j + 1 < 7:
                    total += abs((p[0, i, j + 1] - p[0, i, j]) - (g[0, i, j + 1] - g[0, i, j]))
                if i + 1 < 6:
                    total += abs((p[0, i + 1, j] - p[0, i, j]) - (g[0, i + 1, j] - g[0, i, j]))
        assert grad_loss(t(p), g, ChangeMask(m)).item() == pytest.approx(total / m.sum(), rel=1e-13)

    @given(arrays(np.float64, (1, 4, 5), elements=st.floats(-100, 100)), st.floats(-1e3, 1e3))
    def test_translation_invariance(self, p, c):
        g = np.linspace(-3, 3, 20).reshape(1, 4, 5)
        m = ChangeMask(np.arange(20).reshape(4, 5) % 3 == 0)
        assert grad_loss(t(p + c), g, m).item() == pytest.approx(grad_loss(t(p), g, m).item(), abs=1e-7)


class TestTotalLoss:
    def parts(self, a=0.5, b=1.5, c=2.0, d=3.0):
        return {"wce": t(a), "mse3d": t(b), "grad": t(c), "mse_dsm": t(d)}

    def test_default_weights(self):
        assert total_loss(self.parts(), LossConfig()).item() == pytest.approx(0.5 + 1.5 + 0.2 * 2.0 + 3.0)

    def test_zero_lambda_removes_gradient(self):
        parts = {k: Tensor(v.data, requires_grad=True) for k, v in self.parts().items()}
        backward(total_loss(parts, LossConfig(1, 1, 0, 1)), None)
        assert parts["grad"].grad is None or not parts["grad"].grad.any()
        assert parts["wce"].grad.item() == 1.0

    @given(st.floats(0, 10), st.floats(0.1, 10))
    def test_linear_in_each_lambda(self, a, k):
        base = total_loss(self.parts(), LossConfig(a, 1, 0.2, 1)).item()
        scaled = total_loss(self.parts(), LossConfig(a + k, 1, 0.2, 1)).item()
        assert scaled - base == pytest.approx(k * 0.5)

    def test_non_finite_term_named(self):
        with pytest.raises(NumericError, match="mse3d"):
            total_loss(self.parts(b=float("nan")), LossConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            LossConfig(0, 0, 0, 0)
        with pytest.raises(ConfigurationError):
            LossConfig(-1, 1, 1, 1)


class TestDeriveDSM:
    def test_examples(self, rng):
        d1 = rng.normal(size=(4, 4))
        assert np.array_equal(derive_dsm_gt(d1, np.zeros((4, 4))), d1)
        assert derive_dsm_gt(np.array([10.0]), np.array([-10.0]))[0] == 0.0

    @given(arrays(np.float32, (3, 3), elements=st.integers(0, 40 * 256).map(lambda v: v / 256)),
           arrays(np.float32, (3, 3), elements=st.integers(-30 * 256, 30 * 256).map(lambda v: v / 256)))
    def test_round_trip_on_height_grid(self, d1, dh):
        assert np.array_equal(derive_dsm_gt(d1, dh) - d1, dh)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            derive_dsm_gt(np.zeros((2, 2)), np.zeros((2, 3)))
