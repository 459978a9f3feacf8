import math

import numpy as np
import pytest

from rrmbench import nn, optim


def finite_diff_grad(spec, weights, x, target, loss, h=1e-5):
    """Central-difference gradient over the flattened parameter vector."""
    flat = nn.flatten_params(weights)
    fd = np.zeros_like(flat)
    for j in range(len(flat)):
        up = flat.copy()
        up[j] += h
        nn.set_flat_params(weights, up)
        f_up, _ = loss.value_and_grad(nn.forward(spec, weights, x), target)
        dn = flat.copy()
        dn[j] -= h
        nn.set_flat_params(weights, dn)
        f_dn, _ = loss.value_and_grad(nn.forward(spec, weights, x), target)
        fd[j] = (f_up - f_dn) / (2 * h)
    nn.set_flat_params(weights, flat)
    return fd


def analytic_grad(spec, weights, x, target, loss):
    _, grads = nn.loss_and_grad(spec, weights, x, target, loss)
    return nn.flatten_params(grads)


def assert_grad_close(spec, weights, x, target, loss, tol=1e-4):
    fd = finite_diff_grad(spec, weights, x, target, loss)
    an = analytic_grad(spec, weights, x, target, loss)
    scale = np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-6)
    worst = np.max(np.abs(fd - an) / scale)
    assert worst < tol, f"gradient mismatch: {worst}"


class TestForward:
    def test_identity_dense(self):
        spec = nn.ModelSpec([nn.Dense(3, 3)])
        weights = [{"w": np.eye(3), "b": np.zeros(3)}]
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_allclose(nn.forward(spec, weights, x), x)

    def test_relu(self):
        spec = nn.ModelSpec([nn.Activation("relu")])
        out = nn.forward(spec, [{}], np.array([[-1.0, 2.0]]))
        np.testing.assert_allclose(out, [[0.0, 2.0]])

    def test_leaky_relu_slope(self):
        spec = nn.ModelSpec([nn.Activation("leaky_relu")])
        out = nn.forward(spec, [{}], np.array([[-1.0, 2.0]]))
        np.testing.assert_allclose(out, [[-0.01, 2.0]])

    def test_sigmoid(self):
        spec = nn.ModelSpec([nn.Activation("sigmoid")])
        out = nn.forward(spec, [{}], np.array([[0.0]]))
        np.testing.assert_allclose(out, [[0.5]])

    def test_shape_mismatch(self):
        spec = nn.ModelSpec([nn.Dense(3, 2)])
        weights = nn.init_weights(spec, np.random.default_rng(0))
        with pytest.raises(ValueError):
            nn.forward(spec, weights, np.ones((1, 4)))

    def test_conv_valid_matches_naive(self):
        rng = np.random.default_rng(1)
        spec = nn.ModelSpec([nn.Conv2d(2, 3, (2, 3))])
        weights = nn.init_weights(spec, rng)
        x = rng.normal(size=(2, 2, 4, 6))
        got = nn.forward(spec, weights, x)
        w, b = weights[0]["w"], weights[0]["b"]
        expect = np.zeros((2, 3, 3, 4))
        for bi in range(2):
            for f in range(3):
                for i in range(3):
                    for j in range(4):
                        expect[bi, f, i, j] = b[f] + np.sum(
                            x[bi, :, i:i + 2, j:j + 3] * w[f])
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_conv_same_preserves_spatial(self):
        rng = np.random.default_rng(2)
        spec = nn.ModelSpec([nn.Conv2d(1, 2, (2, 3), padding="same")])
        weights = nn.init_weights(spec, rng)
        out = nn.forward(spec, weights, rng.normal(size=(1, 1, 4, 5)))
        assert out.shape == (1, 2, 4, 5)

    def test_auto_flatten_between_conv_and_dense(self):
        rng = np.random.default_rng(3)
        spec = nn.ModelSpec([
            nn.Conv2d(1, 2, (2, 3), padding="same"), nn.Activation("relu"),
            nn.Dense(2 * 3 * 4, 5)])
        weights = nn.init_weights(spec, rng)
        out = nn.forward(spec, weights, rng.normal(size=(2, 1, 3, 4)))
        assert out.shape == (2, 5)


class TestLosses:
    def test_power_violation_zero_at_perfect_budget(self):
        loss = nn.PowerViolationLoss(beta=1.0, p_max=10.0)
        pred = np.array([[4.0, 6.0]])
        value, _ = loss.value_and_grad(pred, pred.copy())
        assert value == 0.0

    def test_power_violation_beta_zero_is_mse(self):
        rng = np.random.default_rng(4)
        pred = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 5))
        v0, g0 = nn.PowerViolationLoss(beta=0.0, p_max=10.0).value_and_grad(pred, target)
        v1, g1 = nn.MseLoss().value_and_grad(pred, target)
        assert math.isclose(v0, v1)
        np.testing.assert_allclose(g0, g1)

    def test_power_violation_unit_excess(self):
        # prediction equals target but total exceeds the budget by 1
        loss = nn.PowerViolationLoss(beta=2.5, p_max=10.0)
        pred = np.array([[5.0, 6.0]])
        value, _ = loss.value_and_grad(pred, pred.copy())
        assert math.isclose(value, 2.5 * 1.0)

    def test_power_violation_ignores_undershoot(self):
        loss = nn.PowerViolationLoss(beta=2.5, p_max=10.0)
        pred = np.array([[3.0, 4.0]])
        value, grad = loss.value_and_grad(pred, pred.copy())
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_bce_matches_formula(self):
        loss = nn.BceLoss()
        pred = np.array([[0.8, 0.3]])
        target = np.array([[1.0, 0.0]])
        value, _ = loss.value_and_grad(pred, target)
        assert math.isclose(value, -(math.log(0.8) + math.log(0.7)), rel_tol=1e-12)

    def test_bce_clamps(self):
        loss = nn.BceLoss()
        value, _ = loss.value_and_grad(np.array([[0.0]]), np.array([[1.0]]))
        assert np.isfinite(value)

    def test_sum_rate_budget_loss_value(self):
        rng = np.random.default_rng(5)
        B, U, N = 2, 2, 2
        gain_sq = rng.exponential(1.0, size=(1, B, U, N))
        alpha = np.full((1, B, U, N), 0.5)
        loss = nn.SumRateBudgetLoss(beta=1.0, p_max=10.0, sigma2=1e-3,
                                    dims=(B, U, N), power_scale=10.0)
        pred = rng.uniform(0.1, 0.9, size=(1, B * U * N))
        value, _ = loss.value_and_grad(pred, (gain_sq, alpha))
        p = (pred * 10.0).reshape(B, U, N)
        rate, _ = optim.sm3_objective_grad(p, gain_sq[0], alpha[0], 1e-3)
        excess = np.maximum(p.sum(axis=(1, 2)) - 10.0, 0.0)
        assert math.isclose(value, -rate + np.sum(excess ** 2), rel_tol=1e-12)


class TestGradients:
    def test_constant_loss_zero_gradient(self):
        spec = nn.ModelSpec([nn.Dense(3, 4), nn.Activation("relu"), nn.Dense(4, 2)])
        weights = nn.init_weights(spec, np.random.default_rng(6))
        weights[2]["w"][...] = 0.0
        weights[2]["b"][...] = 0.0
        x = np.random.default_rng(7).normal(size=(4, 3))
        _, grads = nn.loss_and_grad(spec, weights, x, np.zeros((4, 2)), nn.MseLoss())
        assert np.all(nn.flatten_params(grads)[-(4 * 2 + 2):] == 0.0)
        # upstream layers receive no signal either
        assert np.allclose(nn.flatten_params(grads), 0.0)

    def test_linear_least_squares_gradient(self):
        rng = np.random.default_rng(8)
        spec = nn.ModelSpec([nn.Dense(3, 1)])
        weights = nn.init_weights(spec, rng)
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 1))
        _, grads = nn.loss_and_grad(spec, weights, x, y, nn.MseLoss())
        resid = x @ weights[0]["w"] + weights[0]["b"] - y
        np.testing.assert_allclose(grads[0]["w"], 2 * x.T @ resid / 6, rtol=1e-10)
        np.testing.assert_allclose(grads[0]["b"], 2 * resid.sum(axis=0) / 6, rtol=1e-10)

    def test_dense_mse_finite_diff(self):
        rng = np.random.default_rng(9)
        spec = nn.mlp((3, 5, 4, 2))
        weights = nn.init_weights(spec, rng)
        assert_grad_close(spec, weights, rng.normal(size=(5, 3)),
                          rng.normal(size=(5, 2)), nn.MseLoss())

    def test_dense_bce_finite_diff(self):
        rng = np.random.default_rng(10)
        spec = nn.mlp((3, 6, 2), out_act="sigmoid")
        weights = nn.init_weights(spec, rng)
        target = rng.integers(0, 2, size=(4, 2)).astype(float)
        assert_grad_close(spec, weights, rng.normal(size=(4, 3)), target, nn.BceLoss())

    def test_dense_power_violation_finite_diff(self):
        rng = np.random.default_rng(11)
        spec = nn.mlp((4, 6, 4))
        weights = nn.init_weights(spec, rng)
        loss = nn.PowerViolationLoss(beta=1.0, p_max=2.0, num_groups=2)
        assert_grad_close(spec, weights, rng.normal(size=(3, 4)),
                          rng.normal(size=(3, 4)), loss)

    def test_conv_mse_finite_diff(self):
        rng = np.random.default_rng(12)
        spec = nn.ModelSpec([
            nn.Conv2d(1, 2, (2, 3), padding="valid"), nn.Activation("leaky_relu"),
            nn.Dense(2 * 2 * 2, 3)])
        weights = nn.init_weights(spec, rng)
        assert_grad_close(spec, weights, rng.normal(size=(3, 1, 3, 4)),
                          rng.normal(size=(3, 3)), nn.MseLoss())

    def test_conv_same_padding_finite_diff(self):
        rng = np.random.default_rng(13)
        spec = nn.ModelSpec([
            nn.Conv2d(2, 2, (2, 3), padding="same"), nn.Activation("relu"),
            nn.Dense(2 * 3 * 3, 2)])
        weights = nn.init_weights(spec, rng)
        assert_grad_close(spec, weights, rng.normal(size=(2, 2, 3, 3)),
                          rng.normal(size=(2, 2)), nn.MseLoss())

    def test_sum_rate_budget_finite_diff(self):
        rng = np.random.default_rng(14)
        B, U, N = 2, 2, 2
        spec = nn.mlp((B * U * N, 6, B * U * N), out_act="sigmoid")
        weights = nn.init_weights(spec, rng)
        gain_sq = rng.exponential(1.0, size=(3, B, U, N))
        alpha = np.full((3, B, U, N), 0.5)
        loss = nn.SumRateBudgetLoss(beta=1.0, p_max=5.0, sigma2=1e-2,
                                    dims=(B, U, N), power_scale=5.0)
        assert_grad_close(spec, weights, rng.normal(size=(3, B * U * N)),
                          (gain_sq, alpha), loss)


class TestAdam:
    def test_zero_gradient_no_change(self):
        spec = nn.ModelSpec([nn.Dense(2, 2)])
        weights = nn.init_weights(spec, np.random.default_rng(15))
        before = nn.flatten_params(weights).copy()
        state = nn.AdamState(weights)
        grads = [{"w": np.zeros((2, 2)), "b": np.zeros(2)}]
        nn.adam_step(weights, grads, state, nn.AdamParams())
        np.testing.assert_array_equal(nn.flatten_params(weights), before)

    def test_first_step_is_signed_lr(self):
        weights = [{"w": np.array([[1.0, -1.0]]), "b": np.zeros(2)}]
        grads = [{"w": np.array([[0.3, -0.2]]), "b": np.zeros(2)}]
        state = nn.AdamState(weights)
        hyper = nn.AdamParams(lr=1e-3)
        nn.adam_step(weights, grads, state, hyper)
        np.testing.assert_allclose(
            weights[0]["w"], [[1.0 - 1e-3, -1.0 + 1e-3]], atol=1e-7)

    def test_quadratic_convergence(self):
        # minimize (w - 0.7)^2 from w = 0.4 within 1000 steps
        weights = [{"w": np.array([[0.4]]), "b": np.zeros(0)}]
        state = nn.AdamState(weights)
        hyper = nn.AdamParams(lr=1e-3)
        for _ in range(1000):
            g = 2 * (weights[0]["w"] - 0.7)
            nn.adam_step(weights, [{"w": g, "b": np.zeros(0)}], state, hyper)
        assert abs(weights[0]["w"][0, 0] - 0.7) < 1e-3


def toy_regression(n=160, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    w = np.array([[1.0], [-2.0], [0.5]])
    y = x @ w + 0.01 * rng.normal(size=(n, 1))
    return (x[: n // 2], y[: n // 2]), (x[n // 2:], y[n // 2:])


class TestFit:
    def test_single_epoch(self):
        train, val = toy_regression()
        cfg = nn.TrainConfig(max_epochs=1, patience=1, seed=1)
        res = nn.fit(nn.mlp((3, 8, 1)), train, val, cfg, nn.MseLoss())
        assert len(res.history) == 1

    def test_toy_task_loss_decreases(self):
        train, val = toy_regression()
        cfg = nn.TrainConfig(max_epochs=5, patience=5, seed=2)
        res = nn.fit(nn.mlp((3, 16, 1)), train, val, cfg, nn.MseLoss())
        losses = [row["train_loss"] for row in res.history]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_infinite_min_delta_stops_after_patience(self):
        train, val = toy_regression()
        cfg = nn.TrainConfig(max_epochs=50, patience=7, min_delta=np.inf, seed=3)
        res = nn.fit(nn.mlp((3, 8, 1)), train, val, cfg, nn.MseLoss())
        assert len(res.history) == 7
        assert res.stop_reason == "converged"

    def test_deterministic(self):
        train, val = toy_regression()
        cfg = nn.TrainConfig(max_epochs=3, patience=3, seed=4)
        a = nn.fit(nn.mlp((3, 8, 1)), train, val, cfg, nn.MseLoss())
        b = nn.fit(nn.mlp((3, 8, 1)), train, val, cfg, nn.MseLoss())
        np.testing.assert_array_equal(nn.flatten_params(a.weights),
                                      nn.flatten_params(b.weights))

    def test_best_validation_snapshot(self):
        train, val = toy_regression()
        cfg = nn.TrainConfig(max_epochs=10, patience=10, seed=5)
        spec = nn.mlp((3, 8, 1))
        res = nn.fit(spec, train, val, cfg, nn.MseLoss())
        returned = nn.evaluate_loss(spec, res.weights, val[0], val[1], nn.MseLoss())
        recorded = min(row["val_loss"] for row in res.history)
        assert returned <= recorded + 1e-12

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_raises(self):
        train, val = toy_regression()
        cfg = nn.TrainConfig(max_epochs=5, patience=5, seed=6)
        spec = nn.mlp((3, 8, 1), out_act="linear")
        with pytest.raises(nn.TrainingDiverged):
            huge = (train[0] * 1e200, train[1])
            nn.fit(spec, huge, val, cfg, nn.MseLoss())


class TestPredict:
    def test_projection_inactive(self):
        out = nn.project_feasible(np.array([[1.0, 2.0]]), p_max=10.0)
        np.testing.assert_allclose(out, [[1.0, 2.0]])

    def test_projection_halves(self):
        out = nn.project_feasible(np.array([[12.0, 8.0]]), p_max=10.0)
        np.testing.assert_allclose(out, [[6.0, 4.0]])

    def test_projection_clips_negatives(self):
        out = nn.project_feasible(np.array([[-1.0, 2.0]]), p_max=10.0)
        np.testing.assert_allclose(out, [[0.0, 2.0]])

    def test_projection_per_group(self):
        out = nn.project_feasible(np.array([[20.0, 0.0, 1.0, 1.0]]), p_max=10.0,
                                  num_groups=2)
        np.testing.assert_allclose(out, [[10.0, 0.0, 1.0, 1.0]])

    def test_latency_positive(self):
        spec = nn.mlp((3, 8, 2))
        weights = nn.init_weights(spec, np.random.default_rng(16))
        _, per_sample = nn.predict_batch(spec, weights, np.ones((10, 3)))
        assert per_sample > 0 and np.isfinite(per_sample)


class TestNormalizerAndCheckpoint:
    def test_normalizer_standardizes(self):
        rng = np.random.default_rng(17)
        g = rng.exponential(1.0, size=(500, 8))
        norm = nn.GainNormalizer().fit(g)
        z = norm.transform(g)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-9)

    def test_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        spec = nn.ModelSpec([
            nn.Conv2d(1, 2, (2, 3), padding="same"), nn.Activation("relu"),
            nn.Dense(2 * 3 * 4, 4), nn.Activation("leaky_relu")])
        weights = nn.init_weights(spec, rng)
        norm = nn.GainNormalizer().fit(rng.exponential(1.0, size=(10, 12)))
        path = tmp_path / "w.npz"
        nn.save_checkpoint(path, spec, weights, normalizer=norm, extra={"preset": "x"})
        spec2, weights2, norm2, extra = nn.load_checkpoint(path)
        assert spec2 == spec
        assert extra == {"preset": "x"}
        for a, b in zip(weights, weights2):
            assert set(a) == set(b)
            for key in a:
                np.testing.assert_array_equal(a[key], b[key])
        np.testing.assert_array_equal(norm.mean, norm2.mean)

    def test_checkpoint_rejects_unknown_format(self, tmp_path):
        path = tmp_path / "bad.npz"
        meta = np.frombuffer(b'{"format": "other", "spec": "[]", "extra": {}}',
                             dtype=np.uint8)
        np.savez(path, meta=meta)
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)


class TestPresets:
    def test_sm1_preset_shape(self):
        spec = nn.preset_model("sm1", 1, 1, 16)
        weights = nn.init_weights(spec, np.random.default_rng(19))
        out = nn.forward(spec, weights, np.zeros((2, 16)))
        assert out.shape == (2, 16)

    def test_sm3_conv_preset_shape(self):
        B, U, N = 2, 4, 8
        spec = nn.preset_model("sm3-conv", B, U, N)
        weights = nn.init_weights(spec, np.random.default_rng(20))
        out = nn.forward(spec, weights, np.zeros((3, B, U, N + 1)))
        assert out.shape == (3, B * U * N)
        assert np.all((out >= 0) & (out <= 1))

    def test_dqn_preset_shape(self):
        spec = nn.preset_model("dqn", 3, 3, 1, actions=10)
        weights = nn.init_weights(spec, np.random.default_rng(21), scheme="unit_interval")
        out = nn.forward(spec, weights, np.zeros((4, 9)))
        assert out.shape == (4, 10)
