"""Histogram Weighted Loss contracts: hand values, MAE reduction, gradients."""

import numpy as np
import pytest

from lgdemux.loss import HWLConfig, get_loss, histogram_probs, hwl, mae, mse


class TestHistogramProbs:
    def test_constant_image(self):
        probs = histogram_probs(np.full((4, 4), -1.0))
        np.testing.assert_array_equal(probs, np.ones((4, 4)))

    def test_half_half(self):
        img = np.array([[-1.0, -1.0], [1.0, 1.0]])
        np.testing.assert_array_equal(histogram_probs(img), np.full((2, 2), 0.5))

    def test_four_pixel_case(self):
        img = np.array([[-1.0, -1.0], [0.0, 1.0]])
        want = np.array([[0.5, 0.5], [0.25, 0.25]])
        np.testing.assert_array_equal(histogram_probs(img), want)

    def test_per_image_in_batch(self):
        batch = np.stack([np.full((2, 2), -1.0), np.array([[-1.0, -1.0], [1.0, 1.0]])])
        probs = histogram_probs(batch)
        np.testing.assert_array_equal(probs[0], np.ones((2, 2)))
        np.testing.assert_array_equal(probs[1], np.full((2, 2), 0.5))

    def test_depends_on_target_only(self):
        rng = np.random.default_rng(0)
        target = rng.uniform(-1, 1, (8, 8))
        p1 = histogram_probs(target)
        _, g1 = hwl(rng.uniform(-1, 1, (8, 8)), target)
        _, g2 = hwl(rng.uniform(-1, 1, (8, 8)), target)
        p2 = histogram_probs(target)
        np.testing.assert_array_equal(p1, p2)
        # weight magnitudes identical wherever both residuals are nonzero
        np.testing.assert_allclose(np.abs(g1)[np.abs(g1) > 0].min(), np.abs(g2)[np.abs(g2) > 0].min())


class TestHwl:
    def test_zero_when_equal(self):
        x = np.random.default_rng(1).uniform(-1, 1, (2, 8, 8))
        value, grad = hwl(x, x)
        assert value == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(x))

    def test_constant_target_degenerate(self):
        target = np.full((1, 4, 4), 0.25)
        pred = np.random.default_rng(2).uniform(-1, 1, (1, 4, 4))
        value, grad = hwl(pred, target)
        assert value == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(pred))

    def test_hand_computed_2x2(self):
        # target {-1,-1,0,1}, pred {-1,0,0,1}, gamma=4:
        # only the second pixel differs; weight (1-0.5)^4, |resid| 1, /(N*M)=4
        target = np.array([[[-1.0, -1.0], [0.0, 1.0]]])
        pred = np.array([[[-1.0, 0.0], [0.0, 1.0]]])
        value, grad = hwl(pred, target, HWLConfig(gamma=4))
        assert value == pytest.approx(0.015625, abs=1e-12)
        want_grad = np.array([[[0.0, 0.0625 / 4.0], [0.0, 0.0]]])
        np.testing.assert_allclose(grad, want_grad, atol=1e-15)

    def test_gamma_zero_is_mae(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            shape = (int(rng.integers(1, 4)), 8, 8)
            pred = rng.uniform(-1, 1, shape)
            target = rng.uniform(-1, 1, shape)
            v_h, g_h = hwl(pred, target, HWLConfig(gamma=0.0))
            v_m, g_m = mae(pred, target)
            assert abs(v_h - v_m) < 1e-12
            np.testing.assert_allclose(g_h, g_m, atol=1e-15)

    def test_monotone_in_gamma(self):
        rng = np.random.default_rng(4)
        # targets drawn so every histogram bin has prob < 1
        target = rng.uniform(-1, 1, (1, 16, 16))
        pred = rng.uniform(-1, 1, (1, 16, 16))
        values = [hwl(pred, target, HWLConfig(gamma=g))[0] for g in (0.0, 1.0, 2.0, 4.0, 8.0)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(5)
        target = np.round(rng.uniform(-1, 1, (2, 6, 6)), 1)
        pred = rng.uniform(-1, 1, (2, 6, 6))
        value, grad = hwl(pred, target, HWLConfig(gamma=4))
        h = 1e-6
        checked = 0
        for idx in np.ndindex(pred.shape):
            if abs(target[idx] - pred[idx]) < 1e-3:
                continue  # kink of |.|
            pp = pred.copy()
            pp[idx] += h
            pm = pred.copy()
            pm[idx] -= h
            fd = (hwl(pp, target, HWLConfig(gamma=4))[0] - hwl(pm, target, HWLConfig(gamma=4))[0]) / (2 * h)
            if fd == 0.0 and grad[idx] == 0.0:
                continue
            assert abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx])) < 1e-4
            checked += 1
        assert checked > 30

    def test_nonnegative_and_zero_iff(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            pred = rng.uniform(-1, 1, (1, 8, 8))
            target = rng.uniform(-1, 1, (1, 8, 8))
            value, _ = hwl(pred, target)
            assert value >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hwl(np.zeros((1, 4, 4)), np.zeros((1, 5, 5)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            HWLConfig(gamma=-1.0)
        with pytest.raises(ValueError):
            HWLConfig(bins=1)


class TestBaselines:
    def test_zero_when_equal(self):
        x = np.random.default_rng(7).uniform(-1, 1, (3, 4, 4))
        assert mae(x, x)[0] == 0.0
        assert mse(x, x)[0] == 0.0

    def test_constant_offset(self):
        x = np.random.default_rng(8).uniform(-1, 1, (2, 4, 4))
        c = 0.37
        assert mae(x + c, x)[0] == pytest.approx(c, abs=1e-12)
        assert mse(x + c, x)[0] == pytest.approx(c * c, abs=1e-12)

    def test_mse_gradient_fd(self):
        rng = np.random.default_rng(9)
        pred = rng.uniform(-1, 1, (1, 4, 4))
        target = rng.uniform(-1, 1, (1, 4, 4))
        _, grad = mse(pred, target)
        h = 1e-6
        idx = (0, 2, 3)
        pp, pm = pred.copy(), pred.copy()
        pp[idx] += h
        pm[idx] -= h
        fd = (mse(pp, target)[0] - mse(pm, target)[0]) / (2 * h)
        assert fd == pytest.approx(grad[idx], rel=1e-6)

    def test_get_loss(self):
        assert get_loss("mae") is mae
        with pytest.raises(ValueError):
            get_loss("huber")
        fn = get_loss("hwl", HWLConfig(gamma=0.0))
        x = np.random.default_rng(10).uniform(-1, 1, (1, 4, 4))
        y = np.random.default_rng(11).uniform(-1, 1, (1, 4, 4))
        assert fn(x, y)[0] == pytest.approx(mae(x, y)[0], abs=1e-12)
