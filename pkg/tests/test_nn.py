import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import conv2d_naive, lstm_step_naive
from xfire.nn import layers as L
from xfire.nn.gradcheck import gradient_check, rel_error
from xfire.nn.optim import Adam, Parameter, glorot_uniform
from xfire.nn.suite import LAYER_TYPES, run_suite


class TestDense:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 4))
        assert np.array_equal(L.dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_gradcheck(self, rng):
        x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
        R = rng.normal(size=(3, 5))
        dx, dW, db = L.dense_backward(R, x, W)
        rep = gradient_check("dense", lambda: float(np.sum(L.dense_forward(x, W, b) * R)),
                             {"x": dx, "W": dW, "b": db}, {"x": x, "W": W, "b": b}, 1e-6, 1e-3)
        assert rep.passed, rep

    def test_autoencoder_widths(self, rng):
        out = L.dense_forward(rng.normal(size=(2, 400)).astype(np.float32),
                              np.zeros((400, 390), np.float32), np.zeros(390, np.float32))
        assert out.shape == (2, 390)


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 4, 5, 1))
        assert np.array_equal(L.conv2d_forward(x, np.ones((1, 1, 1, 1))), x)

    def test_temporal_shape(self):
        out = L.conv2d_forward(np.zeros((1, 15, 80, 1), np.float32), np.zeros((9, 1, 1, 16), np.float32))
        assert out.shape == (1, 7, 80, 16)

    def test_matches_naive_5x5(self, rng):
        x, k = rng.normal(size=(1, 5, 5, 2)), rng.normal(size=(3, 3, 2, 3))
        assert np.max(np.abs(L.conv2d_forward(x, k) - conv2d_naive(x, k))) < 1e-9

    @given(st.integers(0, 2**31), st.integers(1, 3), st.integers(1, 6), st.integers(1, 6))
    def test_matches_naive_random(self, seed, c, kh, kw):
        r = np.random.default_rng(seed)
        x = r.normal(size=(2, kh + r.integers(0, 3), kw + r.integers(0, 3), c))
        k = r.normal(size=(kh, kw, c, int(r.integers(1, 4))))
        assert np.max(np.abs(L.conv2d_forward(x, k) - conv2d_naive(x, k))) < 1e-9

    def test_backward_matches_naive_adjoint(self, rng):
        # <conv(x,k), R> is bilinear, so its gradients follow from the naive forward
        x, k = rng.normal(size=(2, 6, 5, 2)), rng.normal(size=(3, 2, 2, 3))
        R = rng.normal(size=(2, 4, 4, 3))
        dx, dk = L.conv2d_backward(R, x, k)
        for idx in [(0, 0, 0, 0), (1, 5, 4, 1), (0, 3, 2, 1)]:
            e = np.zeros_like(x)
            e[idx] = 1
            assert dx[idx] == pytest.approx(np.sum(conv2d_naive(e, k) * R), abs=1e-9)

    def test_kernel_too_large(self):
        with pytest.raises(ValueError):
            L.conv2d_forward(np.zeros((1, 3, 3, 1)), np.zeros((4, 1, 1, 1)))


class TestBatchNorm:
    def test_normalizes(self, rng):
        x = rng.normal(3, 5, size=(8, 3, 3, 2))
        out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), L.BatchNormState(2, dtype=np.float64), True)
        flat = out.reshape(-1, 2)
        assert np.allclose(flat.mean(0), 0, atol=1e-5)
        assert np.allclose(flat.var(0), 1, atol=1e-5)

    def test_affine(self, rng):
        x = rng.normal(size=(64, 4, 4, 1))
        out, _ = L.batchnorm_forward(x, np.array([2.0]), np.array([3.0]), L.BatchNormState(1, dtype=np.float64),
                                     True)
        assert out.mean() == pytest.approx(3, abs=1e-6)
        assert out.std() == pytest.approx(2, abs=1e-4)

    def test_running_stats_and_eval(self, rng):
        s = L.BatchNormState(1, momentum=0.9, dtype=np.float64)
        x = rng.normal(4, 2, size=(50, 1, 1, 1))
        L.batchnorm_forward(x, np.ones(1), np.zeros(1), s, True)
        assert s.running_mean[0] == pytest.approx(0.1 * x.mean())
        assert s.running_var[0] == pytest.approx(0.9 + 0.1 * x.var())
        out, _ = L.batchnorm_forward(x[:1], np.ones(1), np.zeros(1), s, False)
        assert out[0, 0, 0, 0] == pytest.approx((x[0, 0, 0, 0] - s.running_mean[0]) / math.sqrt(s.running_var[0] + 1e-5))

    def test_gradcheck_4x3x3x2(self, rng):
        x = rng.normal(size=(4, 3, 3, 2))
        g, b = rng.normal(size=2), rng.normal(size=2)
        R = rng.normal(size=x.shape)
        _, cache = L.batchnorm_forward(x, g, b, L.BatchNormState(2, dtype=np.float64), True)
        dx, dg, db = L.batchnorm_backward(R, cache)
        f = lambda: float(np.sum(L.batchnorm_forward(x, g, b, L.BatchNormState(2, dtype=np.float64), True)[0] * R))
        rep = gradient_check("bn", f, {"x": dx, "g": dg, "b": db}, {"x": x, "g": g, "b": b}, 1e-4, 1e-5)
        assert rep.passed, rep

    def test_train_needs_two_samples(self):
        with pytest.raises(ValueError):
            L.batchnorm_forward(np.zeros((1, 1, 1, 1)), np.ones(1), np.zeros(1), L.BatchNormState(1), True)


class TestActivations:
    def test_softmax_zero_logits(self):
        loss, _ = L.softmax_crossentropy(np.zeros((3, 2)), np.array([0, 1, 1]))
        assert np.allclose(L.softmax(np.zeros((3, 2))), 0.5)
        assert loss == pytest.approx(math.log(2))

    def test_relu(self):
        x = np.array([-2.0, -0.1, 0.3, 4.0])
        assert L.relu_forward(x).tolist() == [0, 0, 0.3, 4.0]

    def test_fused_gradient(self, rng):
        z = rng.normal(size=(6, 2))
        y = rng.integers(0, 2, 6)
        _, dz = L.softmax_crossentropy(z, y)
        rep = gradient_check("ce", lambda: L.softmax_crossentropy(z, y)[0], {"z": dz}, {"z": z}, 1e-6, 1e-5)
        assert rep.passed, rep

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.integers(1, 5))
    def test_softmax_simplex_float32(self, row, n):
        p = L.softmax(np.tile(np.array(row, np.float32), (n, 1)))
        assert np.all((p >= 0) & (p <= 1))
        assert np.allclose(p.sum(-1), 1, atol=1e-6)

    def test_extreme_logits_finite(self):
        loss, dz = L.softmax_crossentropy(np.array([[1000.0, -1000.0]]), np.array([1]))
        assert np.isfinite(loss) and np.all(np.isfinite(dz))


class TestLstm:
    def test_zero_weights(self, rng):
        H = 4
        h, c, _ = L.lstm_step(rng.normal(size=(2, 3)), np.zeros((2, H)), np.zeros((2, H)),
                              np.zeros((3 + H, 4 * H)), np.zeros(4 * H))
        assert np.all(h == 0)

    @pytest.mark.parametrize("trial", range(10))
    def test_matches_naive(self, trial):
        r = np.random.default_rng(trial)
        n, d, H = 2, int(r.integers(1, 5)), int(r.integers(1, 5))
        args = r.normal(size=(n, d)), r.normal(size=(n, H)), r.normal(size=(n, H)), \
            r.normal(size=(d + H, 4 * H)), r.normal(size=4 * H)
        h, c, _ = L.lstm_step(*args)
        h0, c0 = lstm_step_naive(*args)
        assert np.max(np.abs(h - h0)) < 1e-9 and np.max(np.abs(c - c0)) < 1e-9

    def test_step_gradcheck_3_4(self, rng):
        x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        W, b = rng.normal(size=(7, 16)) * 0.5, rng.normal(size=16)
        R = rng.normal(size=(2, 4))
        _, _, cache = L.lstm_step(x, h, c, W, b)
        dx, dh, dc, dW, db = L.lstm_step_backward(R, np.zeros((2, 4)), cache, W)
        f = lambda: float(np.sum(L.lstm_step(x, h, c, W, b)[0] * R))
        rep = gradient_check("lstm", f, {"x": dx, "h": dh, "c": dc, "W": dW, "b": db},
                             {"x": x, "h": h, "c": c, "W": W, "b": b}, 1e-5, 1e-5)
        assert rep.passed, rep

    def test_sequence_equals_steps(self, rng):
        x = rng.normal(size=(2, 6, 3))
        W, b = rng.normal(size=(7, 16)), rng.normal(size=16)
        hs, (hT, cT), _ = L.lstm_forward(x, W, b)
        h, c = np.zeros((2, 4)), np.zeros((2, 4))
        for t in range(6):
            h, c = lstm_step_naive(x[:, t], h, c, W, b)
            assert np.allclose(hs[:, t], h, atol=1e-12)
        assert np.allclose(hT, h) and np.allclose(cT, c)

    def test_full_model_sizes(self):
        W = np.zeros((80 + 64, 256), np.float32)
        hs, _, _ = L.lstm_forward(np.zeros((1, 64, 80), np.float32), W, np.zeros(256, np.float32))
        assert hs.shape == (1, 64, 64)


class TestAdam:
    def test_zero_gradient(self):
        p = Parameter("w", np.array([1.0, -2.0]))
        Adam([p], 1e-3).step()
        assert p.value.tolist() == [1.0, -2.0]

    def test_first_step_magnitude(self):
        p = Parameter("w", np.array([0.5, 0.5]))
        p.grad[:] = [3.0, -0.02]
        Adam([p], 1e-3).step()
        # bias-corrected m/sqrt(v) is sign(g) on step one
        assert np.allclose(p.value, [0.5 - 1e-3, 0.5 + 1e-3], atol=1e-8)

    @pytest.mark.parametrize("lr", [0.3e-5, 1e-3])
    def test_learning_rates(self, lr):
        p = Parameter("w", np.zeros(1, np.float32))
        p.grad[:] = 1
        Adam([p], lr).step()
        assert p.value[0] == pytest.approx(-lr, rel=1e-3)

    def test_duplicate_names(self):
        with pytest.raises(ValueError):
            Adam([Parameter("a", np.zeros(1)), Parameter("a", np.zeros(1))], 1e-3)


def test_glorot_bounds(rng):
    w = glorot_uniform(rng, (400, 390), 400, 390, np.float32)
    lim = math.sqrt(6 / 790)
    assert w.dtype == np.float32 and np.abs(w).max() <= lim and np.abs(w).max() > 0.9 * lim


def test_rel_error_floor():
    assert rel_error(0.0, 1e-12)[()] == pytest.approx(1e-4)


def test_gradcheck_requires_float64():
    x = np.zeros(2, np.float32)
    with pytest.raises(TypeError):
        gradient_check("x", lambda: 0.0, {"x": x}, {"x": x}, 1e-6)


class TestSuite:
    def test_quick_pass(self):
        res = run_suite(trials=3)
        assert [r.name for r in res.reports] == list(LAYER_TYPES)
        assert res.passed, "\n".join(map(str, res.reports))

    @pytest.mark.parametrize("layer", ["dense", "conv2d", "lstm_step", "cnn"])
    def test_corruption_detected(self, layer):
        res = run_suite(trials=3, corrupt=layer, layers=(layer,))
        assert not res.passed

    def test_unknown_layer(self):
        with pytest.raises(ValueError):
            run_suite(1, corrupt="gru")
