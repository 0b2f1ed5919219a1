import math

import numpy as np
import pytest

from efm.core import WeightFormatError, seeded_stream
from efm.model import (EmaState, FieldApproximator, OptimizerState, ema_apply,
                       ema_update, load_weights, loss_and_gradient, optimizer_step,
                       save_weights)


def scalar_forward(net, x):
    """Independent oracle: the same chain computed with plain scalar loops."""
    y = list(map(float, x))
    last = len(net.weights) - 1
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += y[i] * float(w[i, j])
            out.append(acc)
        if li != last:
            if net.activation == "tanh":
                out = [math.tanh(v) for v in out]
            else:
                out = [math.log1p(math.exp(-abs(v))) + max(v, 0.0) for v in out]
        y = out
    return np.array(y)


def finite_difference_grads(net, points, targets, h=1e-4):
    """Independent oracle: central differences on every parameter."""
    def loss_of(flat):
        k = 0
        probe = net.copy()
        for arrs in (probe.weights, probe.biases):
            for a in arrs:
                a[...] = flat[k:k + a.size].reshape(a.shape)
                k += a.size
        return loss_and_gradient(probe, points, targets)[0]

    flat0 = np.concatenate([a.ravel() for a in net.weights + net.biases])
    grad = np.empty_like(flat0)
    for k in range(len(flat0)):
        up = flat0.copy(); up[k] += h
        dn = flat0.copy(); dn[k] -= h
        grad[k] = (loss_of(up) - loss_of(dn)) / (2 * h)
    return grad


def flatten_grads(grads):
    gw, gb = grads
    return np.concatenate([g.ravel() for g in gw + gb])


class TestForward:
    def test_zero_net_maps_to_zero(self):
        net = FieldApproximator([3, 5, 3])
        np.testing.assert_array_equal(net.forward(np.array([1.0, -2.0, 0.5])), np.zeros(3))

    def test_identity_single_layer(self):
        net = FieldApproximator([3, 3], weights=[np.eye(3)], biases=[np.zeros(3)])
        x = np.array([0.3, -1.2, 2.0])
        np.testing.assert_array_equal(net.forward(x), x)

    @pytest.mark.parametrize("activation", ["tanh", "smooth_relu"])
    def test_tiny_net_matches_scalar_arithmetic(self, activation):
        w1 = np.array([[0.5, -0.25, 0.1], [0.2, 0.3, -0.4]])
        b1 = np.array([0.05, -0.1, 0.2])
        w2 = np.array([[1.0, 0.5], [-0.5, 0.25], [0.75, -1.0]])
        b2 = np.array([-0.3, 0.6])
        net = FieldApproximator([2, 3, 2], activation, [w1, w2], [b1, b2])
        x = np.array([0.7, -1.1])
        np.testing.assert_allclose(net.forward(x), scalar_forward(net, x),
                                   rtol=1e-12, atol=1e-14)

    def test_batch_matches_rowwise(self):
        net = FieldApproximator.init_random([3, 8, 3], "smooth_relu",
                                            seeded_stream(0, "init"))
        xs = seeded_stream(1, "pts").standard_normal((5, 3))
        batch = net.forward(xs)
        rows = np.stack([net.forward(x) for x in xs])
        np.testing.assert_allclose(batch, rows, rtol=1e-14)

    def test_finite_on_huge_inputs(self):
        for activation in ("tanh", "smooth_relu"):
            net = FieldApproximator.init_random([3, 16, 16, 3], activation,
                                                seeded_stream(2, "init"))
            x = np.array([1e6, -1e6, 1e6])
            assert np.all(np.isfinite(net.forward(x)))

    def test_dimension_mismatch_rejected(self):
        net = FieldApproximator([3, 4, 3])
        with pytest.raises(Exception, match="dimension"):
            net.forward(np.zeros(5))


class TestLossAndGradient:
    def test_perfect_prediction_zero_loss_zero_grad(self):
        net = FieldApproximator([2, 2], weights=[np.eye(2)], biases=[np.zeros(2)])
        pts = np.array([[0.1, 0.2], [0.5, -0.5]])
        loss, grads = loss_and_gradient(net, pts, pts)
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads[0] + grads[1])

    def test_zero_net_unit_target(self):
        net = FieldApproximator([3, 3])
        loss, _ = loss_and_gradient(net, np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
        assert loss == pytest.approx(1.0)

    def test_empty_batch_rejected(self):
        net = FieldApproximator([2, 2])
        with pytest.raises(Exception, match="empty"):
            loss_and_gradient(net, np.zeros((0, 2)), np.zeros((0, 2)))

    @pytest.mark.parametrize("activation", ["tanh", "smooth_relu"])
    @pytest.mark.parametrize("dims", [[3, 6, 3], [2, 5, 5, 2]])
    def test_gradient_matches_finite_differences(self, activation, dims):
        net = FieldApproximator.init_random(dims, activation,
                                            seeded_stream(3, f"{activation}{dims}"))
        stream = seeded_stream(4, "batch")
        pts = stream.standard_normal((6, dims[0]))
        tgt = stream.standard_normal((6, dims[0]))
        tgt /= np.linalg.norm(tgt, axis=1, keepdims=True)
        _, grads = loss_and_gradient(net, pts, tgt)
        analytic = flatten_grads(grads)
        numeric = finite_difference_grads(net, pts, tgt)
        denom = max(np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(analytic - numeric) / denom < 1e-7


class TestOptimizer:
    def test_zero_gradient_no_decay_is_noop(self):
        net = FieldApproximator.init_random([2, 3, 2], "tanh", seeded_stream(5, "i"))
        before = [w.copy() for w in net.weights]
        state = OptimizerState.for_net(net, learning_rate=0.1)
        zeros = ([np.zeros_like(w) for w in net.weights],
                 [np.zeros_like(b) for b in net.biases])
        optimizer_step(net, zeros, state)
        for b, w in zip(before, net.weights):
            np.testing.assert_array_equal(b, w)
        assert state.step_count == 1

    def test_descends_on_quadratic(self):
        # f(w) = w^2 seen through a 1-layer net with input 1, target 0
        net = FieldApproximator([1, 1], weights=[np.array([[1.0]])],
                                biases=[np.zeros(1)])
        state = OptimizerState.for_net(net, learning_rate=0.1)
        _, grads = loss_and_gradient(net, np.ones((1, 1)), np.zeros((1, 1)))
        optimizer_step(net, grads, state)
        assert net.weights[0][0, 0] < 1.0

    def test_linear_regression_reaches_least_squares(self):
        # oracle: closed-form least squares via lstsq
        stream = seeded_stream(6, "lr")
        X = stream.standard_normal((64, 2))
        true_w = np.array([[1.5, -0.5], [0.25, 2.0]])
        Y = X @ true_w
        w_star, *_ = np.linalg.lstsq(X, Y, rcond=None)
        net = FieldApproximator([2, 2])
        state = OptimizerState.for_net(net, learning_rate=0.05)
        for _ in range(200):
            loss, grads = loss_and_gradient(net, X, Y)
            optimizer_step(net, grads, state)
        assert loss < 1e-3
        np.testing.assert_allclose(net.weights[0], w_star, atol=0.05)

    def test_decoupled_weight_decay_shrinks_params(self):
        net = FieldApproximator([1, 1], weights=[np.array([[2.0]])], biases=[np.zeros(1)])
        state = OptimizerState.for_net(net, learning_rate=0.01, weight_decay=0.5)
        zeros = ([np.zeros((1, 1))], [np.zeros(1)])
        optimizer_step(net, zeros, state)
        assert 0 < net.weights[0][0, 0] < 2.0


class TestEma:
    def test_decay_zero_copies_current(self):
        net = FieldApproximator.init_random([2, 3, 2], "tanh", seeded_stream(7, "i"))
        ema = EmaState.from_net(FieldApproximator([2, 3, 2]), 0.0)
        ema_update(ema, net)
        for s, w in zip(ema.shadow_weights, net.weights):
            np.testing.assert_array_equal(s, w)

    def test_constant_net_geometric_convergence(self):
        net = FieldApproximator([1, 1], weights=[np.array([[1.0]])], biases=[np.zeros(1)])
        ema = EmaState.from_net(FieldApproximator([1, 1]), 0.5)
        gaps = []
        for _ in range(5):
            ema_update(ema, net)
            gaps.append(abs(ema.shadow_weights[0][0, 0] - 1.0))
        np.testing.assert_allclose(gaps, [0.5 ** k for k in range(1, 6)], rtol=1e-12)

    def test_two_value_blend_hand_computed(self):
        # shadow after 0 then 1.0 with decay 0.99: 0.99*0 + 0.01*1 = 0.01
        net = FieldApproximator([1, 1], weights=[np.array([[1.0]])], biases=[np.zeros(1)])
        ema = EmaState.from_net(FieldApproximator([1, 1]), 0.99)
        ema_update(ema, net)
        assert ema.shadow_weights[0][0, 0] == pytest.approx(0.01)
        ema_update(ema, net)
        assert ema.shadow_weights[0][0, 0] == pytest.approx(0.99 * 0.01 + 0.01)

    def test_apply_never_mutates_live_net(self):
        net = FieldApproximator.init_random([2, 4, 2], "smooth_relu",
                                            seeded_stream(8, "i"))
        before = [w.copy() for w in net.weights]
        ema = EmaState.from_net(net, 0.9)
        snap = ema_apply(ema)
        snap.weights[0][...] = 99.0
        for b, w in zip(before, net.weights):
            np.testing.assert_array_equal(b, w)


class TestPersistence:
    def test_round_trip_bit_identical(self, tmp_path):
        net = FieldApproximator.init_random([3, 7, 3], "smooth_relu",
                                            seeded_stream(9, "i"))
        path = tmp_path / "w.json"
        save_weights(net, path, created_from_seed=9)
        back = load_weights(path)
        assert back.layer_dims == net.layer_dims
        assert back.activation == net.activation
        for a, b in zip(net.weights + net.biases, back.weights + back.biases):
            np.testing.assert_array_equal(a, b)

    def test_truncated_file_rejected(self, tmp_path):
        net = FieldApproximator([2, 2])
        path = tmp_path / "w.json"
        save_weights(net, path)
        path.write_text(path.read_text()[:40])
        with pytest.raises(WeightFormatError, match="corrupt weight file"):
            load_weights(path)

    def test_mismatched_dims_rejected(self, tmp_path):
        import json
        net = FieldApproximator([2, 3, 2])
        path = tmp_path / "w.json"
        save_weights(net, path)
        payload = json.loads(path.read_text())
        payload["layer_dims"] = [2, 4, 2]
        path.write_text(json.dumps(payload))
        with pytest.raises(WeightFormatError, match="size does not match"):
            load_weights(path)

    def test_version_mismatch_rejected(self, tmp_path):
        import json
        net = FieldApproximator([2, 2])
        path = tmp_path / "w.json"
        save_weights(net, path)
        payload = json.loads(path.read_text())
        payload["format_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(WeightFormatError, match="version"):
            load_weights(path)
