import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..errors import ContractViolationError, UnknownModelError
from ..models.config import MODEL_NAMES, SMOTE_SUFFIX, RunConfig
from ..models.state import ChannelNormalizer, SampleSet
from .balance import smote_oversample
from .checkpoints import (
    forest_from_checkpoint,
    load_checkpoint,
    network_from_checkpoint,
    normalizer_from_header,
    save_forest,
    save_network,
)
from .dataset import fit_feature_scaler, normalize_array, normalize_sample_set
from .featurize import featurize_grids
from .forest import RandomForest, fit_forest
from .networks import Network, build_model, encode, predict_scores, train_autoencoder, train_classifier

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"
AUTOENCODER_FILE = "autoencoder.json"

PathLike = Union[str, Path]


def parse_run(run: str) -> Tuple[str, bool]:
    """Split a run name such as ``conv2d-raw+smote`` into (model, smote)."""
    smote = run.endswith(SMOTE_SUFFIX)
    model = run[:-len(SMOTE_SUFFIX)] if smote else run
    if model not in MODEL_NAMES:
        raise UnknownModelError(f"unknown model '{model}'; expected one of {', '.join(MODEL_NAMES)}")
    return model, smote


def run_name(model: str, smote: bool) -> str:
    return f"{model}{SMOTE_SUFFIX}" if smote else model


class TrainedModel:
    """A fitted estimator plus the preprocessing that turns prepared grids into its inputs."""

    def __init__(
        self,
        run: str,
        estimator: Union[RandomForest, Network],
        normalizer: Optional[ChannelNormalizer] = None,
        feature_scaler: Optional[ChannelNormalizer] = None,
        encoder: Optional[Network] = None,
    ):
        self.run = run
        self.model, self.smote = parse_run(run)
        self.estimator = estimator
        self.normalizer = normalizer
        self.feature_scaler = feature_scaler
        self.encoder = encoder

    def inputs(self, grids: np.ndarray) -> np.ndarray:
        """Model inputs for prepared N x 18 x 100 grids; raw for the forest, normalized otherwise."""
        if self.model in ("rf-baseline", "mlp-stats"):
            features = featurize_grids(grids)
        elif self.model == "mlp-enc":
            features = encode(self.encoder, grids)
        else:
            return grids
        if self.feature_scaler is not None:
            features = normalize_array(self.feature_scaler, features, axis=1)
        return features

    def predict_scores(self, samples: SampleSet) -> np.ndarray:
        if isinstance(self.estimator, RandomForest):
            if samples.normalized:
                raise ContractViolationError("the forest scores statistics of unnormalized grids")
            return self.estimator.predict_proba(self.inputs(samples.grids))
        if not samples.normalized:
            samples = normalize_sample_set(self.normalizer, samples)
        return predict_scores(self.estimator, self.inputs(samples.grids))

    def save(self, run_dir: PathLike, config: Optional[Dict[str, Any]] = None) -> List[Path]:
        run_dir = Path(run_dir)
        if isinstance(self.estimator, RandomForest):
            return [save_forest(run_dir / CHECKPOINT_FILE, self.estimator, self.normalizer, config)]
        written = []
        encoder_file = None
        if self.encoder is not None:
            encoder_file = AUTOENCODER_FILE
            written.append(save_network(run_dir / AUTOENCODER_FILE, self.encoder,
                                        normalizer=self.normalizer, config=config))
        written.append(save_network(
            run_dir / CHECKPOINT_FILE, self.estimator,
            seed=config["train"]["seed"] if config else None,
            normalizer=self.normalizer,
            feature_scaler=self.feature_scaler,
            encoder_checkpoint=encoder_file,
            config=config,
        ))
        return written

    @classmethod
    def load(cls, run_dir: PathLike) -> "TrainedModel":
        run_dir = Path(run_dir)
        payload = load_checkpoint(run_dir / CHECKPOINT_FILE)
        normalizer = normalizer_from_header(payload)
        if payload["kind"] == "forest":
            return cls(run_dir.name, forest_from_checkpoint(payload), normalizer)
        encoder = None
        if payload.get("encoder_checkpoint"):
            encoder = network_from_checkpoint(load_checkpoint(run_dir / payload["encoder_checkpoint"]))
        return cls(
            run_dir.name,
            network_from_checkpoint(payload),
            normalizer,
            normalizer_from_header(payload, "feature_scaler"),
            encoder,
        )


def fit_model(
    run: str,
    train: SampleSet,
    val: SampleSet,
    config: RunConfig,
    normalizer: Optional[ChannelNormalizer] = None,
) -> Tuple[TrainedModel, Dict[str, Any]]:
    """
    Train one run on prepared splits.

    Network grids are normalized here; the forest sees statistics of the raw
    grids and keeps no normalizer. A ``+smote`` run oversamples the training
    split in the model's own grid space before anything is fitted.

    Returns:
        The trained model and a training log (class counts and per-epoch losses
        or forest build stats)
    """
    model, smote = parse_run(run)
    if model != "rf-baseline":
        train = normalize_sample_set(normalizer, train)
        val = normalize_sample_set(normalizer, val)
    log: Dict[str, Any] = {"run": run, "model": model, "smote": smote,
                           "class_counts": train.class_counts()}
    if smote:
        train = smote_oversample(train, config.smote)
        log["class_counts_after_smote"] = train.class_counts()
        log["synthetic_samples"] = int(train.synthetic.sum())
        logger.info("%s: class counts after SMOTE %s", run, log["class_counts_after_smote"])

    if model == "rf-baseline":
        if train.normalized:
            raise ContractViolationError("the forest trains on statistics of unnormalized grids")
        forest = fit_forest(featurize_grids(train.grids), config.forest, labels=train.labels)
        log["forest"] = forest.build_stats()
        return TrainedModel(run, forest), log

    encoder = None
    feature_scaler = None
    if model == "mlp-enc":
        encoder, ae_history = train_autoencoder(train.grids, config.autoencoder_train, val.grids)
        log["autoencoder"] = ae_history.model_dump(exclude={"seconds"})
        X_train, X_val = encode(encoder, train.grids), encode(encoder, val.grids)
    elif model == "mlp-stats":
        X_train, X_val = featurize_grids(train.grids), featurize_grids(val.grids)
    else:
        X_train, X_val = train.grids, val.grids

    if model in ("mlp-enc", "mlp-stats"):
        feature_scaler = fit_feature_scaler(X_train)
        X_train = normalize_array(feature_scaler, X_train, axis=1)
        X_val = normalize_array(feature_scaler, X_val, axis=1)

    network, history = train_classifier(build_model(model), X_train, train.labels, X_val, val.labels,
                                        config.train)
    log["history"] = history.model_dump(exclude={"seconds"})
    return TrainedModel(run, network, normalizer, feature_scaler, encoder), log
