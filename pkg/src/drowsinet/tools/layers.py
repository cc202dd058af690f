"""
Layer toolkit with analytic gradients.

Every op comes as a forward function plus a ``*_backward`` function taking the
upstream gradient and the forward inputs/cache. The ``Layer`` classes wrap those
ops with parameters and caches so a network can chain them.
"""

import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax as _softmax

from ..errors import NonFiniteError, ShapeError
from ..models.config import TrainConfig
from ..models.state import LayerSpec

logger = logging.getLogger(__name__)

DEFAULT_SLOPE = 0.01
FORGET_BIAS = 1.0


# ---------------------------------------------------------------------------
# Functional ops
# ---------------------------------------------------------------------------

def dense(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense shapes do not conform: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


def dense_backward(grad: np.ndarray, x: np.ndarray, W: np.ndarray) -> Tuple[np.ndarray, ...]:
    return grad @ W.T, x.T @ grad, grad.sum(axis=0)


def leaky_relu(x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(grad: np.ndarray, x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    # The subgradient at exactly 0 is the slope.
    return grad * np.where(x > 0, 1.0, slope)


def conv_output_length(length: int, kernel: int, stride: int) -> int:
    if length < kernel:
        raise ShapeError(f"input length {length} is shorter than kernel {kernel}")
    return (length - kernel) // stride + 1


def _conv1d_columns(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """[B, C, L] -> [B * L_out, C * K] patches."""
    windows = sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :]
    batch, channels, l_out, _ = windows.shape
    return windows.transpose(0, 2, 1, 3).reshape(batch * l_out, channels * kernel)


def conv1d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of [B, C_in, L] with [C_out, C_in, K] kernels."""
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv1d shapes do not conform: x{x.shape} kernels{kernels.shape}")
    c_out, _, k = kernels.shape
    l_out = conv_output_length(x.shape[2], k, stride)
    cols = _conv1d_columns(x, k, stride)
    out = cols @ kernels.reshape(c_out, -1).T + bias
    return out.reshape(x.shape[0], l_out, c_out).transpose(0, 2, 1)


def conv1d_backward(grad: np.ndarray, x: np.ndarray, kernels: np.ndarray,
                    stride: int = 1) -> Tuple[np.ndarray, ...]:
    c_out, c_in, k = kernels.shape
    batch, _, l_out = grad.shape
    cols = _conv1d_columns(x, k, stride)
    grad_mat = grad.transpose(0, 2, 1).reshape(-1, c_out)

    d_kernels = (grad_mat.T @ cols).reshape(kernels.shape)
    d_bias = grad_mat.sum(axis=0)
    d_cols = (grad_mat @ kernels.reshape(c_out, -1)).reshape(batch, l_out, c_in, k)
    dx = np.zeros_like(x)
    span = stride * (l_out - 1) + 1
    for j in range(k):
        dx[:, :, j:j + span:stride] += d_cols[:, :, :, j].transpose(0, 2, 1)
    return dx, d_kernels, d_bias


def _conv2d_columns(x: np.ndarray, kernel: Tuple[int, int], stride: Tuple[int, int]) -> np.ndarray:
    """[B, C, H, W] -> [B * H_out * W_out, C * Kh * Kw] patches."""
    windows = sliding_window_view(x, kernel, axis=(2, 3))[:, :, ::stride[0], ::stride[1]]
    batch, channels, h_out, w_out, kh, kw = windows.shape
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * h_out * w_out, channels * kh * kw)


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
           stride: Tuple[int, int] = (1, 1)) -> np.ndarray:
    """Valid cross-correlation of [B, C_in, H, W] with [C_out, C_in, Kh, Kw] kernels."""
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv2d shapes do not conform: x{x.shape} kernels{kernels.shape}")
    c_out, _, kh, kw = kernels.shape
    h_out = conv_output_length(x.shape[2], kh, stride[0])
    w_out = conv_output_length(x.shape[3], kw, stride[1])
    cols = _conv2d_columns(x, (kh, kw), stride)
    out = cols @ kernels.reshape(c_out, -1).T + bias
    return out.reshape(x.shape[0], h_out, w_out, c_out).transpose(0, 3, 1, 2)


def conv2d_backward(grad: np.ndarray, x: np.ndarray, kernels: np.ndarray,
                    stride: Tuple[int, int] = (1, 1)) -> Tuple[np.ndarray, ...]:
    c_out, c_in, kh, kw = kernels.shape
    batch, _, h_out, w_out = grad.shape
    cols = _conv2d_columns(x, (kh, kw), stride)
    grad_mat = grad.transpose(0, 2, 3, 1).reshape(-1, c_out)

    d_kernels = (grad_mat.T @ cols).reshape(kernels.shape)
    d_bias = grad_mat.sum(axis=0)
    d_cols = (grad_mat @ kernels.reshape(c_out, -1)).reshape(batch, h_out, w_out, c_in, kh, kw)
    dx = np.zeros_like(x)
    span_h = stride[0] * (h_out - 1) + 1
    span_w = stride[1] * (w_out - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + span_h:stride[0], j:j + span_w:stride[1]] += (
                d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dx, d_kernels, d_bias


def lstm(x: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Dict]:
    """
    Run one LSTM layer over [B, T, F] from zero initial states.

    Gate columns are ordered input, forget, output, candidate.

    Returns:
        Hidden states [B, T, H] and the cache needed by ``lstm_backward``
    """
    if x.ndim != 3 or Wx.shape[0] != x.shape[2] or Wh.shape[0] * 4 != Wh.shape[1] \
            or Wx.shape[1] != Wh.shape[1] or b.shape != (Wh.shape[1],):
        raise ShapeError(f"lstm shapes do not conform: x{x.shape} Wx{Wx.shape} Wh{Wh.shape}")
    batch, steps, _ = x.shape
    hidden = Wh.shape[0]
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    gates = np.empty((steps, 4, batch, hidden))
    cells = np.empty((steps + 1, batch, hidden))
    states = np.empty((steps + 1, batch, hidden))
    cells[0], states[0] = c, h

    x_proj = x @ Wx + b
    for t in range(steps):
        z = x_proj[:, t] + h @ Wh
        i = expit(z[:, :hidden])
        f = expit(z[:, hidden:2 * hidden])
        o = expit(z[:, 2 * hidden:3 * hidden])
        g = np.tanh(z[:, 3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t] = (i, f, o, g)
        cells[t + 1], states[t + 1] = c, h

    cache = {"x": x, "gates": gates, "cells": cells, "states": states}
    return states[1:].transpose(1, 0, 2).copy(), cache


def lstm_backward(grad: np.ndarray, cache: Dict, Wx: np.ndarray,
                  Wh: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Backpropagation through time for ``lstm``; grad is dL/dh for every step."""
    x, gates, cells, states = cache["x"], cache["gates"], cache["cells"], cache["states"]
    batch, steps, _ = x.shape
    hidden = Wh.shape[0]

    dz_all = np.empty((steps, batch, 4 * hidden))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in reversed(range(steps)):
        i, f, o, g = gates[t]
        tanh_c = np.tanh(cells[t + 1])
        dh = grad[:, t] + dh_next
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        dz = dz_all[t]
        dz[:, :hidden] = dc * g * i * (1.0 - i)
        dz[:, hidden:2 * hidden] = dc * cells[t] * f * (1.0 - f)
        dz[:, 2 * hidden:3 * hidden] = dh * tanh_c * o * (1.0 - o)
        dz[:, 3 * hidden:] = dc * i * (1.0 - g ** 2)
        dWh += states[t].T @ dz
        dh_next = dz @ Wh.T
        dc_next = dc * f

    dz_seq = dz_all.transpose(1, 0, 2)
    dx = dz_seq @ Wx.T
    dWx = np.einsum("btf,btg->fg", x, dz_seq)
    db = dz_seq.sum(axis=(0, 1))
    return dx, dWx, dWh, db


def dropout(x: np.ndarray, rate: float, training: bool,
            rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout; returns the output and the scaled keep-mask (None when inactive)."""
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    if x.ndim < 3:
        raise ShapeError(f"global average pooling needs spatial axes, got {x.shape}")
    return x.reshape(x.shape[0], x.shape[1], -1).mean(axis=2)


def global_avg_pool_backward(grad: np.ndarray, input_shape: Tuple[int, ...]) -> np.ndarray:
    spatial = int(np.prod(input_shape[2:]))
    expanded = grad.reshape(grad.shape + (1,) * (len(input_shape) - 2))
    return np.broadcast_to(expanded / spatial, input_shape).copy()


def softmax(logits: np.ndarray) -> np.ndarray:
    return _softmax(logits, axis=1)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean categorical cross-entropy over the batch and its gradient w.r.t. logits.

    ``targets`` is either one-hot [B, K] or integer labels [B].
    """
    if targets.ndim == 1:
        targets = np.eye(logits.shape[1])[targets]
    if targets.shape != logits.shape:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    batch = logits.shape[0]
    log_p = log_softmax(logits, axis=1)
    loss = -float(np.sum(targets * log_p)) / batch
    return loss, (np.exp(log_p) - targets) / batch


def mae_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment estimates per named parameter plus the step counter."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamState":
        return cls(config.learning_rate, config.beta1, config.beta2, config.epsilon)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> Dict[str, np.ndarray]:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    for name, grad in grads.items():
        if grad.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, grad in grads.items():
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        params[name] -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return params


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int,
                   fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape))


class Layer:
    """Base layer: ``forward`` caches what ``backward`` needs; parameters live in ``params``."""

    kind = "Layer"

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return input_shape

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_features: int, units: int, rng: np.random.Generator):
        super().__init__()
        self.params["W"] = glorot_uniform(rng, (in_features, units), in_features, units)
        self.params["b"] = np.zeros(units)

    def output_shape(self, input_shape):
        return (self.params["W"].shape[1],)

    def forward(self, x, training=False):
        self._x = x
        return dense(x, self.params["W"], self.params["b"])

    def backward(self, grad):
        dx, self.grads["W"], self.grads["b"] = dense_backward(grad, self._x, self.params["W"])
        return dx


class LeakyReLU(Layer):
    kind = "LeakyReLU"

    def __init__(self, slope: float = DEFAULT_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x, training=False):
        self._x = x
        return leaky_relu(x, self.slope)

    def backward(self, grad):
        return leaky_relu_backward(grad, self._x, self.slope)


class Conv1D(Layer):
    kind = "Conv1D"

    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int,
                 rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.params["W"] = glorot_uniform(
            rng, (filters, in_channels, kernel), in_channels * kernel, filters * kernel
        )
        self.params["b"] = np.zeros(filters)

    def output_shape(self, input_shape):
        filters, _, kernel = self.params["W"].shape
        return (filters, conv_output_length(input_shape[1], kernel, self.stride))

    def forward(self, x, training=False):
        self._x = x
        return conv1d(x, self.params["W"], self.params["b"], self.stride)

    def backward(self, grad):
        dx, self.grads["W"], self.grads["b"] = conv1d_backward(
            grad, self._x, self.params["W"], self.stride
        )
        return dx


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, in_channels: int, filters: int, kernel: Tuple[int, int],
                 stride: Tuple[int, int], rng: np.random.Generator):
        super().__init__()
        self.stride = tuple(stride)
        area = kernel[0] * kernel[1]
        self.params["W"] = glorot_uniform(
            rng, (filters, in_channels, *kernel), in_channels * area, filters * area
        )
        self.params["b"] = np.zeros(filters)

    def output_shape(self, input_shape):
        filters, _, kh, kw = self.params["W"].shape
        return (
            filters,
            conv_output_length(input_shape[1], kh, self.stride[0]),
            conv_output_length(input_shape[2], kw, self.stride[1]),
        )

    def forward(self, x, training=False):
        self._x = x
        return conv2d(x, self.params["W"], self.params["b"], self.stride)

    def backward(self, grad):
        dx, self.grads["W"], self.grads["b"] = conv2d_backward(
            grad, self._x, self.params["W"], self.stride
        )
        return dx


class LSTM(Layer):
    kind = "LSTM"

    def __init__(self, in_features: int, units: int, rng: np.random.Generator):
        super().__init__()
        limit = 1.0 / np.sqrt(units)
        self.params["Wx"] = rng.uniform(-limit, limit, size=(in_features, 4 * units))
        self.params["Wh"] = rng.uniform(-limit, limit, size=(units, 4 * units))
        bias = np.zeros(4 * units)
        bias[units:2 * units] = FORGET_BIAS
        self.params["b"] = bias

    def output_shape(self, input_shape):
        return (input_shape[0], self.params["Wh"].shape[0])

    def forward(self, x, training=False):
        out, self._cache = lstm(x, self.params["Wx"], self.params["Wh"], self.params["b"])
        return out

    def backward(self, grad):
        dx, self.grads["Wx"], self.grads["Wh"], self.grads["b"] = lstm_backward(
            grad, self._cache, self.params["Wx"], self.params["Wh"]
        )
        return dx


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x, training=False):
        out, self._mask = dropout(x, self.rate, training, self.rng)
        return out

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class GlobalAvgPool(Layer):
    kind = "GlobalAvgPool"

    def output_shape(self, input_shape):
        return (input_shape[0],)

    def forward(self, x, training=False):
        self._shape = x.shape
        return global_avg_pool(x)

    def backward(self, grad):
        return global_avg_pool_backward(grad, self._shape)


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reshape(Layer):
    kind = "Reshape"

    def __init__(self, shape: Sequence[int]):
        super().__init__()
        self.shape = tuple(shape)

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {input_shape} to {self.shape}")
        return self.shape

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Transpose(Layer):
    """Permute the per-sample axes; ``axes`` index the sample shape, batch excluded."""

    kind = "Transpose"

    def __init__(self, axes: Sequence[int]):
        super().__init__()
        self.axes = tuple(axes)

    def output_shape(self, input_shape):
        return tuple(input_shape[a] for a in self.axes)

    def forward(self, x, training=False):
        return x.transpose((0,) + tuple(a + 1 for a in self.axes))

    def backward(self, grad):
        inverse = np.argsort(self.axes)
        return grad.transpose((0,) + tuple(int(a) + 1 for a in inverse))


class LastTimestep(Layer):
    kind = "LastTimestep"

    def output_shape(self, input_shape):
        return (input_shape[1],)

    def forward(self, x, training=False):
        self._shape = x.shape
        return x[:, -1, :]

    def backward(self, grad):
        dx = np.zeros(self._shape)
        dx[:, -1, :] = grad
        return dx


def build_layer(spec: LayerSpec, input_shape: Tuple[int, ...],
                rng: np.random.Generator) -> Layer:
    """Instantiate a layer for a per-sample input shape, drawing initial weights from ``rng``."""
    kind = spec.kind
    if kind == "Dense":
        if len(input_shape) != 1:
            raise ShapeError(f"Dense expects a flat input, got {input_shape}")
        return Dense(input_shape[0], spec.units, rng)
    if kind == "LeakyReLU":
        return LeakyReLU(DEFAULT_SLOPE if spec.slope is None else spec.slope)
    if kind == "Conv1D":
        if len(input_shape) != 2:
            raise ShapeError(f"Conv1D expects [channels, length], got {input_shape}")
        return Conv1D(input_shape[0], spec.units, spec.kernel[0], spec.stride[0], rng)
    if kind == "Conv2D":
        if len(input_shape) != 3:
            raise ShapeError(f"Conv2D expects [channels, height, width], got {input_shape}")
        return Conv2D(input_shape[0], spec.units, tuple(spec.kernel), tuple(spec.stride), rng)
    if kind == "LSTM":
        if len(input_shape) != 2:
            raise ShapeError(f"LSTM expects [steps, features], got {input_shape}")
        return LSTM(input_shape[1], spec.units, rng)
    if kind == "Dropout":
        return Dropout(spec.rate)
    if kind == "GlobalAvgPool":
        return GlobalAvgPool()
    if kind == "Flatten":
        return Flatten()
    if kind == "Reshape":
        return Reshape(spec.shape)
    if kind == "Transpose":
        return Transpose(spec.axes)
    if kind == "LastTimestep":
        return LastTimestep()
    raise ShapeError(f"unsupported layer kind {kind}")
