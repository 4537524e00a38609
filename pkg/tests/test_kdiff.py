"""Tests for the learnable-target trainer: k parameter, networks, gradients, optimizer."""

import math

import numpy as np
import pytest
from scipy.special import expit

from kdiff_lab import (
    FLOW_MATCHING,
    U_LOSS,
    UNIFORM_MEASURE,
    V_LOSS,
    KParam,
    NonFiniteLoss,
    OptimizerState,
    PureLinear,
    TrainConfig,
    TwoLayer,
    compute_moments,
    equilibrium_weight,
    k_target,
    k_value,
    kappa,
    optimizer_step,
    random_orthonormal_basis,
    sample_t,
    train,
    training_step,
    u_to_v,
)

from helpers import ReplayRNG, gradient_check, random_gradient_instance


class TestKParam:
    def test_constant_center(self):
        param = KParam.constant(0.5)
        for t in (0.0, 0.3, 1.0):
            assert k_value(param, t) == pytest.approx(0.5)

    def test_binned_all_equal_knots(self):
        param = KParam(np.zeros(5))
        t = np.linspace(0, 1, 33)
        np.testing.assert_allclose(k_value(param, t), 0.5, atol=1e-15)

    def test_binned_interpolates_sigmoid_values(self):
        # knots at t = 0, 0.5, 1 with pre-sigmoid values (0, 0, 40):
        # k(0.75) is halfway between 0.5 and ~1
        param = KParam(np.array([0.0, 0.0, 40.0]))
        assert k_value(param, 0.75) == pytest.approx(0.75, abs=1e-9)
        assert k_value(param, 0.25) == pytest.approx(0.5, abs=1e-15)

    def test_value_strictly_inside_unit_interval(self):
        # float64 sigmoid saturates to exactly 0.0/1.0 beyond |w| ~ 36.7,
        # so strict interiority is tested on the representable range and the
        # wider range against the saturated bracket
        rng = np.random.default_rng(0)
        for _ in range(20):
            param = KParam(rng.uniform(-36.0, 36.0, size=6))
            vals = param.value(np.linspace(0, 1, 101))
            assert np.all(vals > 0.0) and np.all(vals < 1.0)
        for _ in range(10):
            param = KParam(rng.uniform(-40.0, 40.0, size=6))
            vals = param.value(np.linspace(0, 1, 101))
            assert np.all(vals >= expit(-40.0)) and np.all(vals <= expit(40.0))

    def test_constant_mode_is_time_independent(self):
        param = KParam.constant(0.8)
        vals = param.value(np.linspace(0, 1, 11))
        np.testing.assert_array_equal(vals, vals[0])

    def test_grad_raw_routes_to_bracketing_knots(self):
        param = KParam(np.zeros(3))  # knots 0, 0.5, 1
        grad = param.grad_raw(np.array([0.25]), np.array([1.0]))
        # weight 0.5 to each of knots 0 and 1 of the first bin, sigmoid slope 0.25
        np.testing.assert_allclose(grad, [0.125, 0.125, 0.0])

    def test_invalid_shapes(self):
        with pytest.raises(ValueError):
            KParam(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            KParam(np.zeros(1))
        with pytest.raises(ValueError):
            KParam.constant(0.0)


class TestUToV:
    def test_k_half_collapses_to_doubling(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal((6, 4))
        z = rng.standard_normal((6, 4))
        t = rng.uniform(0, 1, 6)
        np.testing.assert_array_equal(u_to_v(u, z, t, np.full(6, 0.5)), 2.0 * u)

    def test_x_prediction_identity(self):
        # k=1, t=0.9: v = (x - z) / 0.1 = x - n for z = 0.9 x + 0.1 n
        rng = np.random.default_rng(2)
        x = rng.standard_normal(5)
        n = rng.standard_normal(5)
        z = 0.9 * x + 0.1 * n
        v = u_to_v(x, z, 0.9, 1.0)
        np.testing.assert_allclose(v, x - n, atol=1e-12)

    def test_clamp_engages_near_the_end(self):
        # k=1, t=0.97: raw denominator 0.03 clamps to 0.05
        u = np.ones(3)
        z = np.zeros(3)
        np.testing.assert_allclose(u_to_v(u, z, 0.97, 1.0), np.ones(3) / 0.05)
        # a smaller floor leaves it unclamped
        np.testing.assert_allclose(
            u_to_v(u, z, 0.97, 1.0, clamp_floor=0.01), np.ones(3) / 0.03, rtol=1e-12
        )


class _OracleNet:
    """Test stub that emits a fixed output regardless of the input."""

    def __init__(self, output):
        self.output = np.asarray(output, dtype=np.float64)

    @property
    def dim(self):
        return self.output.shape[1]

    def params(self):
        return {}

    def forward(self, z, t):
        return self.output

    def forward_cache(self, z, t):
        return self.output, None

    def backward(self, cache, grad_out):
        return {}


class TestTrainingStep:
    @pytest.mark.parametrize("loss_mode", ["u", "v_alg1"])
    def test_perfect_oracle_gives_zero_loss_and_gradients(self, loss_mode):
        x = np.random.default_rng(3).standard_normal((8, 5))
        kparam = KParam.constant(0.62)
        config = TrainConfig(loss_mode=loss_mode, batch=8, steps=1)
        rng = ReplayRNG(42)
        t = sample_t(config.measure, rng, size=8)
        e = rng.standard_normal((8, 5))
        k = np.asarray(kparam.value(t))
        u = k[:, None] * x - (1.0 - k[:, None]) * e
        rng.rewind()
        loss, grads = training_step(_OracleNet(u), kparam, x, config, rng)
        assert loss == 0.0
        np.testing.assert_array_equal(grads["k"], 0.0)

    def test_frozen_k_loss_matches_equilibrium_loss(self):
        # with the weight pinned at the optimum, the average step loss over
        # many fresh batches reproduces the closed-form equilibrium loss
        basis = random_orthonormal_basis(6, 2, np.random.default_rng(4))
        k = 0.75
        moments = compute_moments(FLOW_MATCHING, k_target(k), U_LOSS, UNIFORM_MEASURE)
        from kdiff_lab import optimal_loss, DimensionPair, sample_data

        net = PureLinear(equilibrium_weight(basis, moments))
        kparam = KParam.constant(k, trainable=False)
        config = TrainConfig(loss_mode="u", batch=512, steps=1)
        rng = np.random.default_rng(5)
        losses = []
        for _ in range(400):
            x = sample_data(basis, 512, rng)
            loss, _ = training_step(net, kparam, x, config, rng)
            losses.append(loss)
        losses = np.asarray(losses)
        se = losses.std(ddof=1) / math.sqrt(len(losses))
        expected = optimal_loss(moments, DimensionPair(6, 2)).total
        assert abs(losses.mean() - expected) < 3.0 * se

    def test_non_finite_loss_raises(self):
        x = np.full((2, 3), 1e200)
        net = PureLinear(np.full((3, 3), 1e200))
        kparam = KParam.constant(0.5)
        config = TrainConfig(batch=2, steps=1)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteLoss):
            training_step(net, kparam, x, config, np.random.default_rng(6))


class TestLossEquivalence:
    def test_v_loss_is_kappa_squared_times_u_loss_per_sample(self):
        rng = np.random.default_rng(7)
        n, dim = 10_000, 4
        t = rng.uniform(0.1, 0.9, n)
        k = rng.uniform(0.1, 0.9, n)
        x = rng.standard_normal((n, dim))
        e = rng.standard_normal((n, dim))
        u_hat = rng.standard_normal((n, dim))
        z = t[:, None] * x + (1.0 - t)[:, None] * e
        u = k[:, None] * x - (1.0 - k)[:, None] * e
        raw_den = k * (1.0 - t) + (1.0 - k) * t
        assert raw_den.min() > 0.05, "test region must stay unclamped"
        v = u_to_v(u, z, t, k)
        v_pred = u_to_v(u_hat, z, t, k)
        v_loss = 0.5 * np.sum((v_pred - v) ** 2, axis=1)
        u_loss = 0.5 * np.sum((u_hat - u) ** 2, axis=1)
        np.testing.assert_allclose(v_loss, u_loss / raw_den**2, atol=1e-10, rtol=0)

    def test_conversion_factor_matches_kappa(self):
        for k, t in [(0.2, 0.3), (0.7, 0.6), (0.5, 0.9)]:
            kap = kappa(FLOW_MATCHING, k_target(k), V_LOSS, t)
            assert kap == pytest.approx(1.0 / (k * (1.0 - t) + (1.0 - k) * t), rel=1e-14)

    def test_batch_means_agree_between_modes(self):
        # same draws, both modes; mean v-loss equals mean of kappa^2-weighted
        # u-losses, reconstructed here per-sample
        x = np.random.default_rng(8).standard_normal((64, 4))
        net = PureLinear(0.3 * np.random.default_rng(9).standard_normal((4, 4)))
        kparam = KParam.constant(0.7)
        rng = ReplayRNG(10)
        loss_v, _ = training_step(net, kparam, x, TrainConfig(loss_mode="v_alg1", steps=1), rng)
        rng.rewind()
        t = sample_t(UNIFORM_MEASURE, rng, size=64)
        e = rng.standard_normal((64, 4))
        k = np.asarray(kparam.value(t))
        z = t[:, None] * x + (1.0 - t)[:, None] * e
        u = k[:, None] * x - (1.0 - k)[:, None] * e
        raw_den = k * (1.0 - t) + (1.0 - k) * t
        if raw_den.min() <= 0.05:
            pytest.skip("clamped draw; identity holds only unclamped")
        per_sample_u = 0.5 * np.sum((net.forward(z, t) - u) ** 2, axis=1)
        assert loss_v == pytest.approx(float(np.mean(per_sample_u / raw_den**2)), rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("loss_mode", ["u", "v_alg1"])
    def test_matches_central_differences(self, loss_mode):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 12:
            net, kparam, x, config, seed, margin = random_gradient_instance(rng, loss_mode)
            if loss_mode == "v_alg1" and margin < 2e-3:
                continue
            worst = gradient_check(net, kparam, x, config, seed)
            assert worst <= 1e-5, f"gradient mismatch {worst:.2e} (seed {seed})"
            checked += 1

    def test_stop_gradient_on_target_kills_k_gradient_in_u_mode(self):
        x = np.random.default_rng(12).standard_normal((16, 4))
        net = PureLinear(0.1 * np.random.default_rng(13).standard_normal((4, 4)))
        kparam = KParam.constant(0.6)
        config = TrainConfig(loss_mode="u", stop_grad_target=True, steps=1)
        _, grads = training_step(net, kparam, x, config, ReplayRNG(14))
        np.testing.assert_array_equal(grads["k"], 0.0)

    def test_stop_gradient_variant_matches_central_differences(self):
        # with the target frozen, differentiate through the prediction path only;
        # verified against differences of a loss that rebuilds v from frozen draws
        rng = np.random.default_rng(15)
        net, kparam, x, config, seed, margin = random_gradient_instance(rng, "v_alg1")
        while margin < 2e-3 or not kparam.trainable:
            net, kparam, x, config, seed, margin = random_gradient_instance(rng, "v_alg1")
        config = TrainConfig(loss_mode="v_alg1", stop_grad_target=True, steps=1)
        replay = ReplayRNG(seed)
        _, grads = training_step(net, kparam, x, config, replay)
        t = np.asarray(replay._tape[0][2])
        e = np.asarray(replay._tape[1][2])
        k0 = np.asarray(kparam.value(t))
        z = t[:, None] * x + (1.0 - t)[:, None] * e
        u0 = k0[:, None] * x - (1.0 - k0[:, None]) * e
        v_frozen = u_to_v(u0, z, t, k0, config.clamp_floor)

        def loss_at(raw):
            kp = KParam(np.asarray(raw))
            kk = np.asarray(kp.value(t))
            v_pred = u_to_v(net.forward(z, t), z, t, kk, config.clamp_floor)
            return 0.5 * float(np.sum((v_pred - v_frozen) ** 2)) / len(x)

        h = 1e-6
        base = float(kparam.raw)
        numeric = (loss_at(base + h) - loss_at(base - h)) / (2.0 * h)
        assert float(grads["k"]) == pytest.approx(numeric, rel=1e-4, abs=1e-9)


class TestOptimizer:
    def test_sgd_unit_learning_rate(self):
        params = {"w": np.array([1.0, 2.0])}
        grads = {"w": np.array([0.5, -1.0])}
        config = TrainConfig(optimizer="sgd", lr=1.0)
        optimizer_step(params, grads, OptimizerState(), config)
        np.testing.assert_array_equal(params["w"], [0.5, 3.0])

    def test_adam_first_step_is_lr_scaled_sign(self):
        params = {"w": np.zeros(3)}
        grads = {"w": np.array([10.0, -0.01, 3.0])}
        config = TrainConfig(optimizer="adam", lr=1e-2)
        optimizer_step(params, grads, OptimizerState(), config)
        assert np.all(np.abs(params["w"]) <= config.lr * (1.0 + 1e-6))
        np.testing.assert_allclose(np.abs(params["w"]), config.lr, rtol=1e-5)
        assert np.all(np.sign(params["w"]) == [-1.0, 1.0, -1.0])

    def test_zero_gradients_leave_parameters_unchanged(self):
        for opt in ("sgd", "adam"):
            params = {"w": np.array([1.0, -2.0])}
            state = OptimizerState()
            config = TrainConfig(optimizer=opt, lr=0.1)
            for _ in range(3):
                optimizer_step(params, {"w": np.zeros(2)}, state, config)
            np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_scalar_parameter_updates_in_place(self):
        raw = np.asarray(0.0)
        params = {"k": raw}
        optimizer_step(params, {"k": np.asarray(2.0)}, OptimizerState(), TrainConfig(optimizer="sgd", lr=0.5))
        assert float(raw) == -1.0


class TestTrain:
    def test_deterministic_given_seed(self):
        basis = random_orthonormal_basis(8, 2, np.random.default_rng(16))
        config = TrainConfig(steps=100, batch=64, seed=21)
        runs = []
        for _ in range(2):
            net = PureLinear.zeros(8)
            kparam = KParam.constant(0.5)
            runs.append((train(net, kparam, basis, config), net.weight.copy()))
        (h1, w1), (h2, w2) = runs
        np.testing.assert_array_equal(h1.losses, h2.losses)
        np.testing.assert_array_equal(h1.k_values, h2.k_values)
        np.testing.assert_array_equal(w1, w2)

    def test_k_stays_strictly_inside_unit_interval(self):
        basis = random_orthonormal_basis(8, 2, np.random.default_rng(17))
        net = PureLinear.zeros(8)
        kparam = KParam.constant(0.5)
        config = TrainConfig(steps=500, batch=64, seed=3)
        history = train(net, kparam, basis, config)
        assert np.all(history.k_values > expit(-40.0))
        assert np.all(history.k_values < expit(40.0))

    def test_trainable_k_moves_toward_dimension_ratio(self):
        # D=16, d=4: the loss-minimising target parameter is 16/20 = 0.8
        basis = random_orthonormal_basis(16, 4, np.random.default_rng(2))
        net = PureLinear.zeros(16)
        kparam = KParam.constant(0.5)
        config = TrainConfig(steps=3000, batch=128, seed=11)
        history = train(net, kparam, basis, config)
        assert abs(history.final_k - 0.8) < 0.05

    def test_frozen_k_weight_converges_to_equilibrium(self):
        basis = random_orthonormal_basis(2, 1, np.random.default_rng(100))
        net = PureLinear.zeros(2)
        kparam = KParam.constant(0.5, trainable=False)
        config = TrainConfig(
            loss_mode="u", optimizer="sgd", lr=3e-2, batch=32768, steps=1000,
            seed=5, k_trainable=False,
        )
        train(net, kparam, basis, config)
        moments = compute_moments(FLOW_MATCHING, k_target(0.5), U_LOSS, UNIFORM_MEASURE)
        w_star = equilibrium_weight(basis, moments)
        assert np.linalg.norm(net.weight - w_star) < 1e-3

    def test_binned_history_records_probe_points(self):
        basis = random_orthonormal_basis(6, 2, np.random.default_rng(18))
        net = PureLinear.zeros(6)
        kparam = KParam.binned(8, 0.5)
        config = TrainConfig(steps=50, batch=32, seed=9)
        history = train(net, kparam, basis, config)
        assert history.k_values.shape == (50, 5)
        np.testing.assert_array_equal(history.probe_points, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_two_layer_network_trains(self):
        basis = random_orthonormal_basis(4, 2, np.random.default_rng(19))
        net = TwoLayer.init(4, 8, np.random.default_rng(20))
        kparam = KParam.constant(0.5, trainable=False)
        config = TrainConfig(steps=300, batch=128, seed=7, k_trainable=False, lr=3e-3)
        history = train(net, kparam, basis, config)
        assert history.losses[-50:].mean() < history.losses[:50].mean()
