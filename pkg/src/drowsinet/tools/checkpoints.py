import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..errors import ConfigurationError
from ..models.state import ChannelNormalizer, ModelSpec
from .forest import RandomForest
from .networks import Network
from .storage import read_json, write_json

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

PathLike = Union[str, Path]


def tensor_to_dict(name: str, value: np.ndarray) -> Dict[str, Any]:
    return {"name": name, "shape": list(value.shape), "values": value.ravel().tolist()}


def tensor_from_dict(payload: Dict[str, Any]) -> Tuple[str, np.ndarray]:
    values = np.asarray(payload["values"], dtype=np.float64)
    shape = tuple(int(s) for s in payload["shape"])
    if values.size != int(np.prod(shape)):
        raise ConfigurationError(f"tensor {payload['name']} holds {values.size} values for shape {shape}")
    return payload["name"], values.reshape(shape)


def _header(model: str, seed: Optional[int], normalizer: Optional[ChannelNormalizer],
            feature_scaler: Optional[ChannelNormalizer], config: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "model": model,
        "seed": seed,
        "normalizer": normalizer.model_dump() if normalizer else None,
        "feature_scaler": feature_scaler.model_dump() if feature_scaler else None,
        "config": config,
    }


def save_network(
    path: PathLike,
    network: Network,
    seed: Optional[int] = None,
    normalizer: Optional[ChannelNormalizer] = None,
    feature_scaler: Optional[ChannelNormalizer] = None,
    encoder_checkpoint: Optional[str] = None,
    config: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a network checkpoint: header, architecture and every parameter tensor at full precision."""
    payload = _header(network.spec.name, seed, normalizer, feature_scaler, config)
    payload["kind"] = "network"
    payload["spec"] = network.spec.model_dump()
    payload["encoder_checkpoint"] = encoder_checkpoint
    payload["tensors"] = [tensor_to_dict(name, value) for name, value in network.parameters().items()]
    path = write_json(path, payload)
    logger.info("saved %s checkpoint (%d parameters) to %s", network.spec.name, network.n_parameters, path)
    return path


def network_from_checkpoint(payload: Dict[str, Any]) -> Network:
    _check_version(payload)
    network = Network.from_spec(ModelSpec(**payload["spec"]))
    network.load_parameters(dict(tensor_from_dict(t) for t in payload["tensors"]))
    network.trained = True
    return network


def save_forest(
    path: PathLike,
    forest: RandomForest,
    normalizer: Optional[ChannelNormalizer] = None,
    config: Optional[Dict[str, Any]] = None,
) -> Path:
    payload = _header("rf-baseline", forest.config.seed, normalizer, None, config)
    payload["kind"] = "forest"
    payload["forest"] = forest.to_dict()
    return write_json(path, payload)


def forest_from_checkpoint(payload: Dict[str, Any]) -> RandomForest:
    _check_version(payload)
    return RandomForest.from_dict(payload["forest"])


def load_checkpoint(path: PathLike) -> Dict[str, Any]:
    payload = read_json(path)
    _check_version(payload)
    return payload


def normalizer_from_header(payload: Dict[str, Any], key: str = "normalizer") -> Optional[ChannelNormalizer]:
    value = payload.get(key)
    return ChannelNormalizer(**value) if value else None


def _check_version(payload: Dict[str, Any]):
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version {version!r}")

