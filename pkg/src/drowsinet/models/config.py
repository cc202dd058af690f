import zlib
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ConfigurationError
from .state import N_FEATURES


MODEL_NAMES: List[str] = [
    "rf-baseline", "mlp-stats", "mlp-raw", "mlp-enc",
    "conv1d-raw", "conv2d-raw", "lstm-raw",
]
SMOTE_SUFFIX = "+smote"


def derive_seed(top_seed: int, tag: str) -> int:
    """Combine a top-level seed with a fixed per-module tag into a 32-bit seed."""
    sequence = np.random.SeedSequence([int(top_seed), zlib.crc32(tag.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


class WindowConfig(BaseModel):
    window_frames: int = Field(default=300, gt=0)
    stride_alert: int = Field(default=75, ge=1)
    stride_drowsy: int = Field(default=5, ge=1)
    target_len: int = Field(default=100, ge=2)
    max_untracked_fraction: float = Field(default=0.2, ge=0.0, le=1.0)


class SplitConfig(BaseModel):
    n_test_participants: int = Field(default=10, ge=1)
    # train:val = 3:1
    val_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    seed: int = 0


class ForestConfig(BaseModel):
    n_trees: int = Field(default=100, ge=1)
    max_depth: int = Field(default=20, ge=1)
    features_per_split: int = Field(default=10, ge=1, le=N_FEATURES)
    min_samples_split: int = Field(default=2, ge=2)
    bootstrap: bool = True
    seed: int = 0


class TrainConfig(BaseModel):
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=64, ge=1)
    seed: int = 0
    shuffle: bool = True
    learning_rate: float = Field(default=1e-3, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class SmoteConfig(BaseModel):
    k_neighbors: int = Field(default=5, ge=1)
    target: Literal["equalize-to-majority"] = "equalize-to-majority"
    seed: int = 0


class ClassSignature(BaseModel):
    """Behavioural signature of one raw drowsiness state."""
    blink_rate_hz: float = Field(ge=0.0)
    blink_frames: int = Field(ge=1)
    eye_closure_base: float = Field(ge=0.0, le=100.0)
    eye_closure_drift: float = Field(ge=0.0)  # points per second within a segment
    yawn_rate_hz: float = Field(ge=0.0)
    yawn_frames: int = Field(default=90, ge=1)
    nod_amplitude: float = Field(ge=0.0)  # degrees of pitch
    nod_rate_hz: float = Field(ge=0.0)
    jerk_rate_hz: float = Field(default=0.0, ge=0.0)
    plateau_frames: int = Field(default=45, ge=1)
    jerk_amplitude: float = Field(default=15.0, ge=0.0)


def _default_signatures() -> List[ClassSignature]:
    return [
        ClassSignature(blink_rate_hz=0.3, blink_frames=4, eye_closure_base=5.0,
                       eye_closure_drift=0.0, yawn_rate_hz=0.0, nod_amplitude=1.0,
                       nod_rate_hz=0.1),
        ClassSignature(blink_rate_hz=0.45, blink_frames=5, eye_closure_base=12.0,
                       eye_closure_drift=0.1, yawn_rate_hz=0.02, nod_amplitude=1.8,
                       nod_rate_hz=0.12),
        ClassSignature(blink_rate_hz=0.5, blink_frames=8, eye_closure_base=34.0,
                       eye_closure_drift=0.4, yawn_rate_hz=0.05, nod_amplitude=5.0,
                       nod_rate_hz=0.2, jerk_rate_hz=0.02),
        ClassSignature(blink_rate_hz=0.4, blink_frames=14, eye_closure_base=52.0,
                       eye_closure_drift=0.5, yawn_rate_hz=0.03, nod_amplitude=7.0,
                       nod_rate_hz=0.25, jerk_rate_hz=0.08),
    ]


class AnnotatorConfig(BaseModel):
    n_annotators: int = Field(default=3, ge=1)
    boundary_jitter_frames: float = Field(default=15.0, ge=0.0)
    mislabel_prob: float = Field(default=0.05, ge=0.0, lt=0.5)


class GeneratorConfig(BaseModel):
    """Synthetic corpus parameters; dwell times in seconds, one entry per raw state."""
    model_config = ConfigDict(ser_json_inf_nan="strings")

    n_participants: int = Field(default=70, ge=1)
    videos_per_participant: int = Field(default=1, ge=1)
    video_frames: int = Field(default=4500, ge=1)
    fps: int = Field(default=30, ge=1)
    dwell_seconds: List[float] = Field(default_factory=lambda: [75.0, 7.0, 6.0, 5.0])
    # Probability of escalating from Slight to Moderate and from Moderate to Extreme;
    # Alert always escalates and Extreme always de-escalates.
    escalation_prob: List[float] = Field(default_factory=lambda: [0.3, 0.3])
    signatures: List[ClassSignature] = Field(default_factory=_default_signatures)
    noise_scale: float = Field(default=1.0, ge=0.0)
    untracked_rate: float = Field(default=0.0005, ge=0.0, le=1.0)
    untracked_burst_frames: int = Field(default=15, ge=1)
    annotators: AnnotatorConfig = Field(default_factory=AnnotatorConfig)
    window_frames: int = Field(default=300, ge=1)
    seed: int = 42

    @model_validator(mode="after")
    def _check_generator(self) -> "GeneratorConfig":
        if len(self.dwell_seconds) != 4 or len(self.signatures) != 4:
            raise ValueError("dwell_seconds and signatures need one entry per raw state")
        if len(self.escalation_prob) != 2 or not all(0.0 <= p <= 1.0 for p in self.escalation_prob):
            raise ValueError("escalation_prob needs two probabilities in [0, 1]")
        if any(d <= 0 for d in self.dwell_seconds):
            raise ValueError("dwell means must be positive")
        if not any(d * self.fps > self.window_frames for d in self.dwell_seconds):
            raise ValueError("at least one state must dwell longer than a window")
        return self


class RunConfig(BaseModel):
    """Effective configuration of a CLI run; echoed into every artifact."""
    workdir: str = "work"
    corpus_dir: Optional[str] = None
    seed: Optional[int] = None
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    window: WindowConfig = Field(default_factory=WindowConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    normalize: bool = True
    dump_features: bool = False
    forest: ForestConfig = Field(default_factory=ForestConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    autoencoder_train: TrainConfig = Field(default_factory=TrainConfig)
    smote: SmoteConfig = Field(default_factory=SmoteConfig)
    smote_enabled: bool = False
    tune_thresholds: bool = True
    threshold_objective: Literal["youden", "literal"] = "youden"
    models: List[str] = Field(default_factory=lambda: list(MODEL_NAMES))
    include_smote_run: bool = True

    @model_validator(mode="after")
    def _check_models(self) -> "RunConfig":
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise ValueError(f"unknown model names: {unknown}")
        return self

    @property
    def corpus_path(self) -> Path:
        return Path(self.corpus_dir) if self.corpus_dir else Path(self.workdir) / "corpus"

    @property
    def dataset_path(self) -> Path:
        return Path(self.workdir) / "dataset"

    @property
    def runs_path(self) -> Path:
        return Path(self.workdir) / "runs"

    @property
    def report_path(self) -> Path:
        return Path(self.workdir) / "report"

    def with_top_seed(self, seed: int) -> "RunConfig":
        """Return a copy whose module seeds are all derived from one top-level seed."""
        update = self.model_copy(deep=True)
        update.seed = seed
        update.generator.seed = derive_seed(seed, "synthgen")
        update.split.seed = derive_seed(seed, "split")
        update.forest.seed = derive_seed(seed, "forest")
        update.train.seed = derive_seed(seed, "train")
        update.autoencoder_train.seed = derive_seed(seed, "autoencoder")
        update.smote.seed = derive_seed(seed, "smote")
        return update


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Load a JSON run config; missing fields fall back to defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}")
    return RunConfig.model_validate_json(text)
