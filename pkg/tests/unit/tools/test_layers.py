import pytest
import numpy as np
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent / "src"))

from drowsinet.errors import NonFiniteError, ShapeError
from drowsinet.models.state import LayerSpec
from drowsinet.tools.layers import (
    LSTM,
    AdamState,
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    LastTimestep,
    LeakyReLU,
    Reshape,
    Transpose,
    adam_step,
    build_layer,
    conv1d,
    conv2d,
    conv_output_length,
    dropout,
    lstm,
    mae_loss,
    softmax,
    softmax_cross_entropy,
)

EPS = 1e-5


def numeric_gradient(f, x):
    """Central finite differences of a scalar function, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + EPS
        plus = f()
        x[idx] = original - EPS
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * EPS)
    return grad


def check_layer_gradients(layer, x, rtol=1e-5, atol=1e-7):
    """Compare a layer's analytic input and parameter gradients with finite differences."""
    rng = np.random.default_rng(99)
    out = layer.forward(x, training=False)
    upstream = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(layer.forward(x, training=False) * upstream))

    layer.forward(x, training=False)
    dx = layer.backward(upstream)
    analytic = {name: grad.copy() for name, grad in layer.grads.items()}

    np.testing.assert_allclose(dx, numeric_gradient(loss, x), rtol=rtol, atol=atol)
    for name, param in layer.params.items():
        np.testing.assert_allclose(analytic[name], numeric_gradient(loss, param), rtol=rtol, atol=atol)


class TestGradients:
    """Finite-difference checks of every layer's backward pass."""

    def test_dense(self):
        rng = np.random.default_rng(0)
        check_layer_gradients(Dense(4, 3, rng), rng.normal(size=(5, 4)))

    def test_leaky_relu(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 6))
        x[np.abs(x) < 0.01] = 0.5
        check_layer_gradients(LeakyReLU(0.01), x)

    def test_conv1d(self):
        rng = np.random.default_rng(2)
        check_layer_gradients(Conv1D(3, 4, kernel=3, stride=2, rng=rng), rng.normal(size=(2, 3, 11)))

    def test_conv2d(self):
        rng = np.random.default_rng(3)
        layer = Conv2D(2, 3, kernel=(3, 3), stride=(2, 1), rng=rng)
        check_layer_gradients(layer, rng.normal(size=(2, 2, 7, 6)))

    def test_lstm(self):
        rng = np.random.default_rng(4)
        check_layer_gradients(LSTM(3, 5, rng), rng.normal(size=(2, 4, 3)))

    def test_global_avg_pool(self):
        rng = np.random.default_rng(5)
        check_layer_gradients(GlobalAvgPool(), rng.normal(size=(3, 4, 5)))

    def test_reshape_transpose_last_timestep(self):
        rng = np.random.default_rng(6)
        check_layer_gradients(Reshape([2, 6]), rng.normal(size=(2, 3, 4)))
        check_layer_gradients(Transpose([1, 0]), rng.normal(size=(2, 3, 4)))
        check_layer_gradients(LastTimestep(), rng.normal(size=(2, 3, 4)))

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(4, 3))
        labels = np.array([0, 2, 1, 2])
        _, grad = softmax_cross_entropy(logits, labels)
        numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_mae(self):
        rng = np.random.default_rng(8)
        pred = rng.normal(size=(3, 4))
        target = pred + np.where(rng.random((3, 4)) < 0.5, 0.3, -0.3)
        _, grad = mae_loss(pred, target)
        numeric = numeric_gradient(lambda: mae_loss(pred, target)[0], pred)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


class TestForwardOps:
    """Test forward semantics against direct definitions."""

    def test_conv_output_length(self):
        assert conv_output_length(100, 5, 2) == 48
        assert conv_output_length(18, 3, 2) == 8
        with pytest.raises(ShapeError):
            conv_output_length(2, 3, 1)

    def test_conv1d_matches_loop(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 3, 9))
        kernels = rng.normal(size=(4, 3, 3))
        bias = rng.normal(size=4)
        out = conv1d(x, kernels, bias, stride=2)
        assert out.shape == (2, 4, 4)
        for b in range(2):
            for c in range(4):
                for t in range(4):
                    expected = np.sum(x[b, :, 2 * t:2 * t + 3] * kernels[c]) + bias[c]
                    assert out[b, c, t] == pytest.approx(expected)

    def test_conv2d_matches_loop(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 2, 6, 7))
        kernels = rng.normal(size=(3, 2, 3, 3))
        bias = np.zeros(3)
        out = conv2d(x, kernels, bias, stride=(1, 2))
        assert out.shape == (1, 3, 4, 3)
        for c in range(3):
            for i in range(4):
                for j in range(3):
                    expected = np.sum(x[0, :, i:i + 3, 2 * j:2 * j + 3] * kernels[c])
                    assert out[0, c, i, j] == pytest.approx(expected)

    def test_lstm_shapes_and_forget_bias(self):
        rng = np.random.default_rng(12)
        layer = LSTM(3, 4, rng)
        assert np.all(layer.params["b"][4:8] == 1.0)
        assert np.all(layer.params["b"][:4] == 0.0)
        assert np.all(np.abs(layer.params["Wh"]) <= 0.5)
        states, _ = lstm(rng.normal(size=(2, 5, 3)), layer.params["Wx"], layer.params["Wh"], layer.params["b"])
        assert states.shape == (2, 5, 4)
        assert np.all(np.abs(states) < 1.0)

    def test_softmax_rows(self):
        probs = softmax(np.array([[1000.0, 0.0, -1000.0], [0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        np.testing.assert_allclose(probs[1], 1.0 / 3.0)
        assert np.all(np.isfinite(probs))

    def test_cross_entropy_accepts_one_hot(self):
        logits = np.array([[2.0, 1.0, 0.0]])
        by_label, _ = softmax_cross_entropy(logits, np.array([0]))
        by_one_hot, _ = softmax_cross_entropy(logits, np.array([[1.0, 0.0, 0.0]]))
        assert by_label == pytest.approx(by_one_hot)

    def test_dense_shape_mismatch(self):
        rng = np.random.default_rng(13)
        with pytest.raises(ShapeError):
            Dense(4, 2, rng).forward(np.zeros((3, 5)))


class TestDropout:
    """Test inverted dropout."""

    def test_inactive_in_eval_mode(self):
        x = np.ones((4, 4))
        out, mask = dropout(x, 0.3, training=False)
        assert out is x
        assert mask is None

    def test_scaled_mask_in_training(self):
        x = np.ones((200, 50))
        out, mask = dropout(x, 0.3, training=True, rng=np.random.default_rng(0))
        kept = out[out > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.7)
        assert abs(np.mean(out == 0) - 0.3) < 0.02

    def test_backward_uses_mask(self):
        layer = Dropout(0.5)
        layer.rng = np.random.default_rng(1)
        out = layer.forward(np.ones((3, 4)), training=True)
        np.testing.assert_array_equal(layer.backward(np.ones((3, 4))), out)

    def test_training_needs_rng(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 0.5, training=True)


class TestAdam:
    """Test the optimizer step."""

    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 1e-3])}
        adam_step(params, grads, AdamState(lr=1e-3))
        expected = np.array([1.0, -2.0, 0.5]) - 1e-3 * np.sign(grads["w"])
        np.testing.assert_allclose(params["w"], expected, rtol=1e-6)

    def test_step_counter(self):
        state = AdamState()
        params = {"w": np.zeros(2)}
        for _ in range(3):
            adam_step(params, {"w": np.ones(2)}, state)
        assert state.t == 3

    def test_non_finite_gradient_names_parameter(self):
        params = {"layer0.W": np.zeros(2)}
        with pytest.raises(NonFiniteError, match="layer0.W"):
            adam_step(params, {"layer0.W": np.array([np.nan, 1.0])}, AdamState())
        np.testing.assert_array_equal(params["layer0.W"], 0.0)


class TestBuildLayer:
    """Test layer construction from specs."""

    def test_dense_needs_flat_input(self):
        with pytest.raises(ShapeError):
            build_layer(LayerSpec(kind="Dense", units=3), (2, 5), np.random.default_rng(0))

    def test_conv2d_output_shape(self):
        spec = LayerSpec(kind="Conv2D", units=16, kernel=[3, 3], stride=[2, 2])
        layer = build_layer(spec, (1, 18, 100), np.random.default_rng(0))
        assert layer.output_shape((1, 18, 100)) == (16, 8, 49)

    def test_glorot_bounds(self):
        layer = build_layer(LayerSpec(kind="Dense", units=50), (100,), np.random.default_rng(0))
        limit = np.sqrt(6.0 / 150)
        assert np.all(np.abs(layer.params["W"]) <= limit)
        assert np.all(layer.params["b"] == 0.0)
