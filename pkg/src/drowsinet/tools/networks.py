import logging
import time
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..errors import NonFiniteError, NotFittedError, ShapeError, UnknownModelError
from ..models.config import TrainConfig
from ..models.state import (
    N_CHANNELS,
    N_CLASSES,
    N_FEATURES,
    N_STEPS,
    LayerSpec,
    ModelSpec,
    TrainingHistory,
)
from .layers import (
    AdamState,
    Dropout,
    Layer,
    adam_step,
    build_layer,
    mae_loss,
    softmax,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

NETWORK_NAMES = (
    "mlp-stats", "mlp-raw", "mlp-enc", "autoencoder",
    "conv1d-raw", "conv2d-raw", "lstm-raw",
)
ENCODER_WIDTHS = (900, 450, 216, N_FEATURES)
DROPOUT_RATE = 0.3
LSTM_UNITS = 64
PREDICT_BATCH = 256

LossFn = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


def _dense(units: int) -> List[LayerSpec]:
    return [LayerSpec(kind="Dense", units=units), LayerSpec(kind="LeakyReLU")]


def _head() -> List[LayerSpec]:
    return [LayerSpec(kind="Dense", units=4), LayerSpec(kind="LeakyReLU"),
            LayerSpec(kind="Dense", units=N_CLASSES)]


def _conv1d(units: int, kernel: int) -> List[LayerSpec]:
    return [LayerSpec(kind="Conv1D", units=units, kernel=[kernel], stride=[2]),
            LayerSpec(kind="LeakyReLU")]


def _conv2d(units: int, stride: List[int]) -> List[LayerSpec]:
    return [LayerSpec(kind="Conv2D", units=units, kernel=[3, 3], stride=stride),
            LayerSpec(kind="LeakyReLU")]


def build_model(name: str) -> ModelSpec:
    """
    Return the pinned architecture for a network name.

    Raw-input networks take an 18 x 100 grid per sample; ``mlp-stats`` and
    ``mlp-enc`` take a 108-D vector.

    Raises:
        UnknownModelError: name is not a known network
    """
    raw = [N_CHANNELS, N_STEPS]
    logits = [N_CLASSES]

    if name in ("mlp-stats", "mlp-enc"):
        return ModelSpec(name=name, layers=_head(), input_shape=[N_FEATURES], output_shape=logits)

    if name == "mlp-raw":
        return ModelSpec(name=name, layers=[LayerSpec(kind="Flatten"), *_head()],
                         input_shape=raw, output_shape=logits)

    if name == "autoencoder":
        encoder = [LayerSpec(kind="Flatten")]
        for width in ENCODER_WIDTHS:
            encoder += _dense(width)
        decoder: List[LayerSpec] = []
        for width in reversed(ENCODER_WIDTHS[:-1]):
            decoder += _dense(width)
        decoder += [LayerSpec(kind="Dense", units=N_CHANNELS * N_STEPS),
                    LayerSpec(kind="Reshape", shape=raw)]
        return ModelSpec(name=name, layers=encoder + decoder, input_shape=raw,
                         output_shape=raw, encoder_layers=len(encoder))

    if name == "conv1d-raw":
        layers = _conv1d(32, 5) + _conv1d(64, 5) + _conv1d(64, 3) + _conv1d(128, 3)
        layers += [LayerSpec(kind="Dropout", rate=DROPOUT_RATE), LayerSpec(kind="GlobalAvgPool"),
                   LayerSpec(kind="Dense", units=N_CLASSES)]
        return ModelSpec(name=name, layers=layers, input_shape=raw, output_shape=logits)

    if name == "conv2d-raw":
        layers = [LayerSpec(kind="Reshape", shape=[1, N_CHANNELS, N_STEPS])]
        layers += _conv2d(16, [2, 2]) + _conv2d(32, [2, 2]) + _conv2d(64, [1, 2])
        layers += [LayerSpec(kind="Dropout", rate=DROPOUT_RATE), LayerSpec(kind="GlobalAvgPool"),
                   LayerSpec(kind="Dense", units=N_CLASSES)]
        return ModelSpec(name=name, layers=layers, input_shape=raw, output_shape=logits)

    if name == "lstm-raw":
        layers = [
            LayerSpec(kind="Transpose", axes=[1, 0]),
            LayerSpec(kind="LSTM", units=LSTM_UNITS),
            LayerSpec(kind="LSTM", units=LSTM_UNITS),
            LayerSpec(kind="LastTimestep"),
            LayerSpec(kind="Dense", units=N_CLASSES),
        ]
        return ModelSpec(name=name, layers=layers, input_shape=raw, output_shape=logits)

    raise UnknownModelError(f"unknown network '{name}'; expected one of {', '.join(NETWORK_NAMES)}")


class Network:
    """A sequential stack of layers built from a ModelSpec."""

    def __init__(self, spec: ModelSpec, layers: List[Layer]):
        self.spec = spec
        self.layers = layers
        self.trained = False

    @classmethod
    def from_spec(cls, spec: ModelSpec,
                  seed: Union[int, np.random.SeedSequence] = 0) -> "Network":
        rng = np.random.default_rng(seed)
        shape = tuple(spec.input_shape)
        layers = []
        for layer_spec in spec.layers:
            layer = build_layer(layer_spec, shape, rng)
            shape = tuple(layer.output_shape(shape))
            layers.append(layer)
        if shape != tuple(spec.output_shape):
            raise ShapeError(f"{spec.name} produces {shape}, spec declares {tuple(spec.output_shape)}")
        return cls(spec, layers)

    def parameters(self) -> Dict[str, np.ndarray]:
        """Named references to every parameter array, in layer order."""
        return {
            f"layer{i}.{name}": value
            for i, layer in enumerate(self.layers)
            for name, value in layer.params.items()
        }

    def gradients(self) -> Dict[str, np.ndarray]:
        return {
            f"layer{i}.{name}": value
            for i, layer in enumerate(self.layers)
            for name, value in layer.grads.items()
        }

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def load_parameters(self, tensors: Dict[str, np.ndarray]):
        params = self.parameters()
        if set(tensors) != set(params):
            raise ShapeError(f"checkpoint tensors do not match {self.spec.name} parameters")
        for name, target in params.items():
            if tensors[name].shape != target.shape:
                raise ShapeError(f"tensor {name} has shape {tensors[name].shape}, expected {target.shape}")
            target[...] = tensors[name]

    def set_dropout_rng(self, rng: Optional[np.random.Generator]):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def forward(self, x: np.ndarray, training: bool = False, upto: Optional[int] = None) -> np.ndarray:
        for layer in self.layers[:upto]:
            x = layer.forward(x, training)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def check_input(self, X: np.ndarray):
        if tuple(X.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(
                f"{self.spec.name} expects samples of shape {tuple(self.spec.input_shape)}, "
                f"got {tuple(X.shape[1:])}"
            )


def _batched_forward(network: Network, X: np.ndarray, upto: Optional[int] = None,
                     batch_size: int = PREDICT_BATCH) -> np.ndarray:
    if len(X) == 0:
        return network.forward(X, training=False, upto=upto)
    outputs = [network.forward(X[i:i + batch_size], training=False, upto=upto)
               for i in range(0, len(X), batch_size)]
    return np.concatenate(outputs, axis=0)


def evaluate_loss(network: Network, X: np.ndarray, targets: np.ndarray, loss_fn: LossFn,
                  batch_size: int = PREDICT_BATCH) -> float:
    total = 0.0
    for i in range(0, len(X), batch_size):
        loss, _ = loss_fn(network.forward(X[i:i + batch_size]), targets[i:i + batch_size])
        total += loss * len(X[i:i + batch_size])
    return total / len(X)


def _fit(network: Network, X: np.ndarray, targets: np.ndarray, loss_fn: LossFn,
         config: TrainConfig, shuffle_rng: np.random.Generator,
         X_val: Optional[np.ndarray] = None, val_targets: Optional[np.ndarray] = None) -> TrainingHistory:
    start = time.time()
    adam = AdamState.from_config(config)
    params = network.parameters()
    history = TrainingHistory()
    n = len(X)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for batch, offset in enumerate(range(0, n, config.batch_size)):
            rows = order[offset:offset + config.batch_size]
            output = network.forward(X[rows], training=True)
            loss, grad = loss_fn(output, targets[rows])
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"non-finite loss while training {network.spec.name} at epoch {epoch} batch {batch}"
                )
            network.backward(grad)
            adam_step(params, network.gradients(), adam)
            total += loss * len(rows)
            logger.debug("%s epoch %d batch %d loss %.6f", network.spec.name, epoch, batch, loss)

        history.train_loss.append(total / n)
        val_loss = None
        if X_val is not None and len(X_val):
            val_loss = evaluate_loss(network, X_val, val_targets, loss_fn)
        history.val_loss.append(val_loss)
        logger.info(
            "%s epoch %d/%d train loss %.4f val loss %s", network.spec.name, epoch,
            config.epochs, history.train_loss[-1], "n/a" if val_loss is None else f"{val_loss:.4f}",
        )
    history.seconds = time.time() - start
    network.trained = True
    return history


def _streams(seed: int) -> Tuple[np.random.SeedSequence, np.random.Generator, np.random.Generator]:
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return init, np.random.default_rng(shuffle), np.random.default_rng(drop)


def train_classifier(
    spec: ModelSpec,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
    config: Optional[TrainConfig] = None,
) -> Tuple[Network, TrainingHistory]:
    """
    Train a classifier with seeded mini-batch Adam on softmax cross-entropy.

    Runs exactly ``config.epochs`` epochs and keeps the final weights.

    Raises:
        ShapeError: inputs do not match the architecture
        NonFiniteError: a batch produced a non-finite loss
    """
    config = config or TrainConfig()
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(X_train) != len(y_train) or len(y_train) == 0:
        raise ShapeError("training inputs and labels must be non-empty and of equal length")
    if y_train.min() < 0 or y_train.max() >= N_CLASSES:
        raise ShapeError(f"labels must lie in 0..{N_CLASSES - 1}")

    init, shuffle_rng, dropout_rng = _streams(config.seed)
    network = Network.from_spec(spec, init)
    network.check_input(X_train)
    network.set_dropout_rng(dropout_rng)
    if X_val is not None:
        X_val = np.asarray(X_val, dtype=np.float64)
        network.check_input(X_val)
        y_val = np.asarray(y_val, dtype=np.int64)
    history = _fit(network, X_train, y_train, softmax_cross_entropy, config, shuffle_rng, X_val, y_val)
    history.class_counts = np.bincount(y_train, minlength=N_CLASSES).tolist()
    return network, history


def train_autoencoder(
    X_train: np.ndarray,
    config: Optional[TrainConfig] = None,
    X_val: Optional[np.ndarray] = None,
) -> Tuple[Network, TrainingHistory]:
    """Fit the autoencoder to reconstruct its inputs under mean absolute error; labels unused."""
    config = config or TrainConfig()
    X_train = np.asarray(X_train, dtype=np.float64)
    init, shuffle_rng, dropout_rng = _streams(config.seed)
    network = Network.from_spec(build_model("autoencoder"), init)
    network.check_input(X_train)
    network.set_dropout_rng(dropout_rng)
    if X_val is not None:
        X_val = np.asarray(X_val, dtype=np.float64)
        network.check_input(X_val)
    history = _fit(network, X_train, X_train, mae_loss, config, shuffle_rng, X_val, X_val)
    return network, history


def encode(autoencoder: Network, X: np.ndarray) -> np.ndarray:
    """108-D encoder outputs for N x 18 x 100 inputs."""
    if autoencoder.spec.encoder_layers is None:
        raise ShapeError(f"{autoencoder.spec.name} has no encoder")
    if not autoencoder.trained:
        raise NotFittedError("autoencoder has not been trained")
    X = np.asarray(X, dtype=np.float64)
    autoencoder.check_input(X)
    return _batched_forward(autoencoder, X, upto=autoencoder.spec.encoder_layers)


def predict_scores(network: Network, X: np.ndarray) -> np.ndarray:
    """Softmax class probabilities in eval mode, one row per sample."""
    if not network.trained:
        raise NotFittedError(f"{network.spec.name} has not been trained")
    X = np.asarray(X, dtype=np.float64)
    network.check_input(X)
    return softmax(_batched_forward(network, X))
