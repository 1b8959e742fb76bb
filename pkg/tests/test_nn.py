import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catebench.errors import (
    EmptyGroupError,
    InvalidConfigError,
    NumericError,
    ShapeError,
)
from catebench.nn import (
    BINARY_CROSS_ENTROPY,
    SIGMOID,
    SQUARED_ERROR,
    MlpParams,
    TrainConfig,
    adam_init,
    adam_step,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_input_gradient,
    mmd2_linear,
    mmd2_linear_with_grad,
    train_early_stop,
)
from catebench.rng import stream

from helpers import assert_close_rel, fd_input_grads, fd_param_grads, random_mlp


class TestMlpInit:
    def test_deterministic_given_seed(self):
        a = mlp_init([3, 2], rng=stream(7))
        b = mlp_init([3, 2], rng=stream(7))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_shapes_two_hidden_layers(self):
        d = 17
        net = mlp_init([d, 100, 100, 1], rng=stream(0))
        assert [w.shape for w in net.weights] == [(d, 100), (100, 100), (100, 1)]
        assert all(np.all(b == 0) for b in net.biases)

    def test_glorot_bound(self):
        net = mlp_init([8, 4, 1], rng=stream(1))
        s = np.sqrt(6.0 / (8 + 4))
        assert np.abs(net.weights[0]).max() <= s

    def test_degenerate_sizes_rejected(self):
        with pytest.raises(InvalidConfigError):
            mlp_init([0, 1], rng=stream(0))
        with pytest.raises(InvalidConfigError):
            mlp_init([4], rng=stream(0))


class TestMlpForward:
    def test_zero_params_give_zero_output(self):
        net = mlp_init([3, 5, 1], rng=stream(0))
        net.weights = [np.zeros_like(w) for w in net.weights]
        out = mlp_forward(net, np.ones((4, 3)))
        assert np.array_equal(out, np.zeros((4, 1)))

    def test_single_linear_layer_exact(self):
        w = np.array([[1.0, -2.0], [0.5, 3.0]])
        b = np.array([0.25, -1.0])
        net = MlpParams([w], [b])
        x = np.array([[2.0, -1.0], [0.0, 4.0]])
        assert np.allclose(mlp_forward(net, x), x @ w + b)

    def test_sigmoid_at_zero_logit(self):
        net = MlpParams([np.zeros((2, 1))], [np.zeros(1)], SIGMOID)
        out = mlp_forward(net, np.array([[3.0, -5.0]]))
        assert out[0, 0] == 0.5

    def test_shape_mismatch(self):
        net = mlp_init([3, 1], rng=stream(0))
        with pytest.raises(ShapeError):
            mlp_forward(net, np.ones((2, 4)))


class TestMlpBackward:
    def test_linear_squared_error_closed_form(self):
        # f(x) = x W, loss = (f - y)^2 at one point: input grad = 2(f-y) W^T
        w = np.array([[2.0], [-3.0]])
        net = MlpParams([w], [np.zeros(1)])
        x = np.array([[1.0, 2.0]])
        y = 1.0
        f = mlp_forward(net, x)
        g_out = 2.0 * (f - y)
        _, gin = mlp_backward(net, x, g_out)
        assert np.allclose(gin, 2.0 * (f[0, 0] - y) * w.T)

    def test_zero_loss_grad_gives_zero_grads(self):
        net, x = random_mlp(stream(3))
        grads, gin = mlp_backward(net, x, np.zeros((x.shape[0], 1)))
        assert all(np.all(g == 0) for g in grads.arrays())
        assert np.all(gin == 0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_finite_differences_identity(self, seed):
        rng = stream(100 + seed)
        net, x = random_mlp(rng, max_hidden_layers=3, max_units=10)
        coeffs = rng.normal(size=(x.shape[0], 1))
        grads, gin = mlp_backward(net, x, coeffs)
        fw, fb = fd_param_grads(net, x, coeffs)
        for a, e in zip(grads.weights, fw):
            assert_close_rel(a, e, rel=1e-4)
        for a, e in zip(grads.biases, fb):
            assert_close_rel(a, e, rel=1e-4)
        assert_close_rel(gin, fd_input_grads(net, x, coeffs), rel=1e-4)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences_sigmoid(self, seed):
        rng = stream(200 + seed)
        net, x = random_mlp(rng, output_activation=SIGMOID)
        coeffs = rng.normal(size=(x.shape[0], 1))
        grads, gin = mlp_backward(net, x, coeffs)
        fw, fb = fd_param_grads(net, x, coeffs)
        for a, e in zip(grads.weights, fw):
            assert_close_rel(a, e, rel=1e-4)
        assert_close_rel(gin, fd_input_grads(net, x, coeffs), rel=1e-4)

    def test_shape_errors(self):
        net = mlp_init([3, 2, 1], rng=stream(0))
        with pytest.raises(ShapeError):
            mlp_backward(net, np.ones((2, 3)), np.ones((3, 1)))
        with pytest.raises(ShapeError):
            mlp_backward(net, np.ones((2, 5)), np.ones((2, 1)))

    def test_input_gradient_helper(self):
        net, x = random_mlp(stream(11))
        g = mlp_input_gradient(net, x)
        _, expected = mlp_backward(net, x, np.ones((x.shape[0], 1)))
        assert np.array_equal(g, expected)


class TestAdam:
    def _params(self):
        return MlpParams([np.array([[1.0, -1.0]])], [np.array([0.5, 0.5])])

    def test_first_step_is_signed_lr(self):
        p = self._params()
        g = MlpParams([np.array([[0.3, -0.7]])], [np.array([2.0, -0.1])])
        state = adam_init(p, lr=0.01)
        _, p2 = adam_step(state, p, g)
        for a, b, gg in zip(p2.arrays(), p.arrays(), g.arrays()):
            assert np.all(np.abs((a - b) + 0.01 * np.sign(gg)) < 1e-6 * 0.01)

    def test_zero_gradients_noop_from_fresh_state(self):
        p = self._params()
        g = MlpParams([np.zeros((1, 2))], [np.zeros(2)])
        state = adam_init(p, lr=0.01)
        state2, p2 = adam_step(state, p, g)
        for a, b in zip(p2.arrays(), p.arrays()):
            assert np.array_equal(a, b)
        assert all(np.all(m == 0) for m in state2.m)
        assert all(np.all(v == 0) for v in state2.v)

    def test_deterministic(self):
        p = self._params()
        g = MlpParams([np.array([[0.3, -0.7]])], [np.array([2.0, -0.1])])
        s = adam_init(p, lr=0.01)
        out1 = adam_step(s, p, g)
        s = adam_init(p, lr=0.01)
        out2 = adam_step(s, p, g)
        for a, b in zip(out1[1].arrays(), out2[1].arrays()):
            assert np.array_equal(a, b)
        assert out1[0].step == out2[0].step == 1

    def test_nonfinite_gradient_rejected(self):
        p = self._params()
        g = MlpParams([np.array([[np.nan, 0.0]])], [np.zeros(2)])
        with pytest.raises(NumericError):
            adam_step(adam_init(p, lr=0.01), p, g)

    def test_shape_mismatch_rejected(self):
        p = self._params()
        g = MlpParams([np.zeros((2, 2))], [np.zeros(2)])
        with pytest.raises(ShapeError):
            adam_step(adam_init(p, lr=0.01), p, g)


class TestTrainEarlyStop:
    def test_linear_regression_converges(self):
        rng = stream(42)
        x = rng.normal(size=(2000, 2))
        y = 2.0 * x[:, 0] - x[:, 1]
        net = mlp_init([2, 100, 100, 1], rng=stream(1))
        cfg = TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=400, patience=20)
        fitted = train_early_stop(net, x, y, SQUARED_ERROR, config=cfg, rng=stream(2))
        perm = stream(2).permutation(2000)
        val = perm[: int(round(2000 * cfg.val_fraction))]
        rmse = np.sqrt(np.mean((mlp_forward(fitted, x[val])[:, 0] - y[val]) ** 2))
        assert rmse < 0.05

    def test_bce_constant_target(self):
        rng = stream(5)
        x = rng.normal(size=(400, 3))
        y = np.ones(400)
        net = mlp_init([3, 20, 1], SIGMOID, rng=stream(6))
        cfg = TrainConfig(learning_rate=1e-2, batch_size=128, max_epochs=200, patience=20)
        fitted = train_early_stop(net, x, y, BINARY_CROSS_ENTROPY, config=cfg, rng=stream(7))
        assert np.all(mlp_forward(fitted, x) > 0.9)

    def test_patience_stop_returns_first_snapshot(self):
        # lr=0 never improves after epoch 1, so training must stop after
        # exactly (1 + patience) epochs and return the epoch-1 snapshot.
        x = stream(8).normal(size=(100, 2))
        y = x[:, 0]
        net = mlp_init([2, 4, 1], rng=stream(9))
        seen = []

        def spy(params, xb):
            seen.append(xb.shape[0])
            zero = MlpParams(
                [np.zeros_like(w) for w in params.weights],
                [np.zeros_like(b) for b in params.biases],
                params.output_activation,
            )
            return 0.0, zero

        cfg = TrainConfig(learning_rate=0.0, batch_size=50, max_epochs=500, patience=1)
        fitted = train_early_stop(net, x, y, extra_penalty=spy, config=cfg, rng=stream(10))
        n_train = 100 - 30
        batches_per_epoch = int(np.ceil(n_train / 50))
        assert len(seen) == 2 * batches_per_epoch  # epoch 1 + one patience epoch
        for a, b in zip(fitted.arrays(), net.arrays()):  # lr=0: snapshot == init
            assert np.array_equal(a, b)

    def test_returned_snapshot_is_best_evaluated(self):
        # Record the parameter trajectory via the penalty hook, rebuild every
        # epoch-end snapshot, and check none beats the returned one.
        rng = stream(20)
        x = rng.normal(size=(300, 2))
        y = x[:, 0] * x[:, 1]
        net = mlp_init([2, 8, 1], rng=stream(21))
        snapshots = []

        def spy(params, xb):
            snapshots.append(params.copy())
            zero = MlpParams(
                [np.zeros_like(w) for w in params.weights],
                [np.zeros_like(b) for b in params.biases],
            )
            return 0.0, zero

        cfg = TrainConfig(learning_rate=3e-3, batch_size=100, max_epochs=40, patience=5)
        fitted = train_early_stop(net, x, y, extra_penalty=spy, config=cfg, rng=stream(22))
        perm = stream(22).permutation(300)
        val = perm[:90]

        def val_loss(p):
            return np.mean((mlp_forward(p, x[val])[:, 0] - y[val]) ** 2)

        per_epoch = int(np.ceil(210 / 100))
        epoch_ends = snapshots[per_epoch::per_epoch]  # params entering each later epoch
        best_seen = min(val_loss(p) for p in epoch_ends) if epoch_ends else np.inf
        assert val_loss(fitted) <= best_seen + 1e-12

    def test_penalty_shifts_training_only(self):
        rng = stream(30)
        x = rng.normal(size=(500, 2))
        y = 3.0 * x[:, 0]
        net = mlp_init([2, 10, 1], rng=stream(31))
        lam = 10.0

        def l2(params, xb):
            grads = MlpParams(
                [2.0 * lam * w for w in params.weights],
                [np.zeros_like(b) for b in params.biases],
            )
            value = lam * sum(float(np.sum(w * w)) for w in params.weights)
            return value, grads

        cfg = TrainConfig(learning_rate=1e-2, batch_size=200, max_epochs=100, patience=100)
        plain = train_early_stop(net, x, y, config=cfg, rng=stream(32))
        shrunk = train_early_stop(net, x, y, extra_penalty=l2, config=cfg, rng=stream(32))
        norm = lambda p: sum(float(np.sum(w * w)) for w in p.weights)
        assert norm(shrunk) < norm(plain)

    def test_sample_weights_tilt_fit(self):
        x = np.ones((200, 1))
        y = np.array([0.0, 1.0] * 100)
        w = np.where(y == 1.0, 3.0, 1.0)
        net = mlp_init([1, 8, 1], rng=stream(40))
        cfg = TrainConfig(learning_rate=1e-2, batch_size=64, max_epochs=300, patience=300)
        fitted = train_early_stop(net, x, y, sample_weight=w, config=cfg, rng=stream(41))
        assert abs(float(mlp_forward(fitted, x)[0, 0]) - 0.75) < 0.05

    def test_deterministic_fit(self):
        rng = stream(50)
        x = rng.normal(size=(120, 3))
        y = x[:, 0] - x[:, 2]
        cfg = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=15, patience=5)
        a = train_early_stop(mlp_init([3, 6, 1], rng=stream(51)), x, y, config=cfg, rng=stream(52))
        b = train_early_stop(mlp_init([3, 6, 1], rng=stream(51)), x, y, config=cfg, rng=stream(52))
        for wa, wb in zip(a.arrays(), b.arrays()):
            assert np.array_equal(wa, wb)

    def test_degenerate_split_rejected(self):
        net = mlp_init([2, 1], rng=stream(0))
        with pytest.raises(InvalidConfigError):
            train_early_stop(net, np.ones((1, 2)), np.ones(1), rng=stream(1))

    def test_nonfinite_targets_rejected(self):
        net = mlp_init([2, 1], rng=stream(0))
        y = np.array([1.0, np.nan, 0.0, 2.0])
        with pytest.raises(NumericError):
            train_early_stop(net, np.ones((4, 2)), y, rng=stream(1))

    def test_config_validation(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(val_fraction=0.0)
        with pytest.raises(InvalidConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(InvalidConfigError):
            TrainConfig(patience=0)


class TestMmd2Linear:
    def test_identical_groups_zero(self):
        a = stream(1).normal(size=(7, 3))
        assert mmd2_linear(a, a) == 0.0

    def test_unit_mean_shift(self):
        rep0 = np.array([[0.5, 1.0], [-0.5, -1.0]])  # mean (0, 0)
        rep1 = np.array([[1.0, 2.0], [1.0, -2.0]])  # mean (1, 0)
        assert mmd2_linear(rep0, rep1) == pytest.approx(1.0)

    def test_symmetry(self):
        rng = stream(2)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(9, 4))
        assert mmd2_linear(a, b) == pytest.approx(mmd2_linear(b, a))

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_and_zero_iff_equal_means(self, n0, n1, d, seed):
        rng = stream(seed)
        a, b = rng.normal(size=(n0, d)), rng.normal(size=(n1, d))
        v = mmd2_linear(a, b)
        assert v >= 0.0
        centered = b - b.mean(axis=0) + a.mean(axis=0)
        assert mmd2_linear(a, centered) == pytest.approx(0.0, abs=1e-24)

    def test_gradients_match_finite_differences(self):
        rng = stream(3)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
        _, g0, g1 = mmd2_linear_with_grad(a, b)
        h = 1e-6
        for idx in np.ndindex(*a.shape):
            hi, lo = a.copy(), a.copy()
            hi[idx] += h
            lo[idx] -= h
            fd = (mmd2_linear(hi, b) - mmd2_linear(lo, b)) / (2 * h)
            assert g0[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        for idx in np.ndindex(*b.shape):
            hi, lo = b.copy(), b.copy()
            hi[idx] += h
            lo[idx] -= h
            fd = (mmd2_linear(a, hi) - mmd2_linear(a, lo)) / (2 * h)
            assert g1[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_empty_group_rejected(self):
        with pytest.raises(EmptyGroupError):
            mmd2_linear(np.empty((0, 2)), np.ones((3, 2)))

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            mmd2_linear(np.ones((2, 2)), np.ones((2, 3)))
