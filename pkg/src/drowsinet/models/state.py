from enum import IntEnum
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import TypedDict


CHANNELS: Tuple[str, ...] = (
    "yaw", "pitch", "roll",
    "blink", "brow_furrow", "brow_raise", "cheek_raise", "eye_closure",
    "mouth_open", "nose_wrinkle", "smile", "upper_lip_raise", "yawn",
    "valence",
    "anger", "disgust", "joy", "surprise",
)
N_CHANNELS = len(CHANNELS)
N_STEPS = 100
N_CLASSES = 3
STATISTICS: Tuple[str, ...] = ("mean", "max", "min", "std", "skew", "kurtosis")
N_FEATURES = N_CHANNELS * len(STATISTICS)

# Declared value range per channel (inclusive).
CHANNEL_RANGES: Dict[str, Tuple[float, float]] = {
    **{name: (-90.0, 90.0) for name in ("yaw", "pitch", "roll")},
    **{name: (0.0, 100.0) for name in CHANNELS[3:13]},
    "valence": (-100.0, 100.0),
    **{name: (0.0, 100.0) for name in ("anger", "disgust", "joy", "surprise")},
}
CHANNEL_LOW = np.array([CHANNEL_RANGES[c][0] for c in CHANNELS])
CHANNEL_HIGH = np.array([CHANNEL_RANGES[c][1] for c in CHANNELS])

STD_FLOOR = 1e-8


class RawLabel(IntEnum):
    """Annotated drowsiness level (four classes)."""
    ALERT = 0
    SLIGHTLY_DROWSY = 1
    MODERATELY_DROWSY = 2
    EXTREMELY_DROWSY = 3


class MergedLabel(IntEnum):
    """Training target: moderately and extremely drowsy are fused."""
    ALERT = 0
    SLIGHT = 1
    MOD_EXT = 2


class FrameRecord(BaseModel):
    """One video frame's 18-channel descriptor with identity and label metadata."""
    participant_id: str
    video_id: str
    frame_index: int = Field(ge=0)
    channels: Tuple[float, ...]
    raw_label: Optional[RawLabel] = None
    tracked: bool = True
    consensus: bool = True

    @model_validator(mode="after")
    def _check_channels(self) -> "FrameRecord":
        if len(self.channels) != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels, got {len(self.channels)}")
        if self.tracked:
            for name, value in zip(CHANNELS, self.channels):
                low, high = CHANNEL_RANGES[name]
                if not (low <= value <= high):
                    raise ValueError(f"channel {name}={value} outside [{low}, {high}]")
        return self


class SampleDescriptor(BaseModel):
    """A 10-second window resampled to an 18 x 100 channel-major grid."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: np.ndarray
    label: MergedLabel
    participant_id: str
    video_id: str
    start_frame: int
    synthetic: bool = False

    @field_validator("grid")
    @classmethod
    def _check_grid(cls, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.float64)
        if grid.shape != (N_CHANNELS, N_STEPS):
            raise ValueError(f"grid must be {N_CHANNELS}x{N_STEPS}, got {grid.shape}")
        if not np.all(np.isfinite(grid)):
            raise ValueError("grid contains missing or non-finite entries")
        return grid


class Window(NamedTuple):
    """A single-label block of consecutive frames cut from one video."""
    block: np.ndarray
    label: MergedLabel
    tracked: np.ndarray
    participant_id: str
    video_id: str
    start_frame: int


class SampleSet(BaseModel):
    """Array-backed collection of samples from one split."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grids: np.ndarray
    labels: np.ndarray
    participant_ids: List[str]
    video_ids: List[str]
    start_frames: List[int]
    synthetic: np.ndarray
    split: str = "train"
    normalized: bool = False

    @model_validator(mode="after")
    def _check_lengths(self) -> "SampleSet":
        n = len(self.labels)
        if self.grids.ndim != 3 or self.grids.shape[0] != n:
            raise ValueError(f"grids shape {self.grids.shape} does not match {n} labels")
        if not (len(self.participant_ids) == len(self.video_ids) == len(self.start_frames) == n):
            raise ValueError("provenance lists must match the number of samples")
        if len(self.synthetic) != n:
            raise ValueError("synthetic flags must match the number of samples")
        return self

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: List[SampleDescriptor], split: str = "train",
                     normalized: bool = False) -> "SampleSet":
        if samples:
            grids = np.stack([s.grid for s in samples])
        else:
            grids = np.zeros((0, N_CHANNELS, N_STEPS))
        return cls(
            grids=grids,
            labels=np.array([int(s.label) for s in samples], dtype=np.int64),
            participant_ids=[s.participant_id for s in samples],
            video_ids=[s.video_id for s in samples],
            start_frames=[s.start_frame for s in samples],
            synthetic=np.array([s.synthetic for s in samples], dtype=bool),
            split=split,
            normalized=normalized,
        )

    def to_samples(self) -> List[SampleDescriptor]:
        return [
            SampleDescriptor(
                grid=self.grids[i],
                label=MergedLabel(int(self.labels[i])),
                participant_id=self.participant_ids[i],
                video_id=self.video_ids[i],
                start_frame=self.start_frames[i],
                synthetic=bool(self.synthetic[i]),
            )
            for i in range(len(self))
        ]

    def class_counts(self) -> List[int]:
        return np.bincount(self.labels, minlength=N_CLASSES).tolist()


class DatasetSplit(BaseModel):
    """Participant-disjoint train / validation / test partition."""
    train: List[SampleDescriptor]
    val: List[SampleDescriptor]
    test: List[SampleDescriptor]

    @model_validator(mode="after")
    def _check_disjoint(self) -> "DatasetSplit":
        train, val, test = (self.participants(name) for name in ("train", "val", "test"))
        if train & val or train & test or val & test:
            raise ValueError("split participant sets overlap")
        return self

    def participants(self, name: str) -> set:
        return {s.participant_id for s in getattr(self, name)}


class ChannelNormalizer(BaseModel):
    """Per-channel z-score parameters fitted on the training split."""
    mean: List[float]
    std: List[float]

    @model_validator(mode="after")
    def _check_std(self) -> "ChannelNormalizer":
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std lengths differ")
        if any(s < STD_FLOOR for s in self.std):
            raise ValueError(f"standard deviations must be >= {STD_FLOOR}")
        return self


class FeatureVector108(BaseModel):
    """Six statistics per channel, channel-major."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    label: MergedLabel
    participant_id: str = ""
    video_id: str = ""
    start_frame: int = 0

    @field_validator("values")
    @classmethod
    def _check_values(cls, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} values, got shape {values.shape}")
        blocks = values.reshape(N_CHANNELS, len(STATISTICS))
        mean, high, low, std = blocks[:, 0], blocks[:, 1], blocks[:, 2], blocks[:, 3]
        if np.any(low > mean) or np.any(mean > high) or np.any(std < 0):
            raise ValueError("statistics violate min <= mean <= max or std >= 0")
        return values


class ImportanceReport(BaseModel):
    """Mean-decrease-impurity importances per feature and per facial channel."""
    per_feature: List[float]
    per_channel: List[float]

    @model_validator(mode="after")
    def _check_normalized(self) -> "ImportanceReport":
        for name, vector in (("per_feature", self.per_feature), ("per_channel", self.per_channel)):
            if any(v < 0 for v in vector):
                raise ValueError(f"{name} importances must be non-negative")
            if abs(sum(vector) - 1.0) > 1e-9:
                raise ValueError(f"{name} importances must sum to 1")
        return self

    def ranked_channels(self) -> List[Tuple[str, float]]:
        return sorted(zip(CHANNELS, self.per_channel), key=lambda item: -item[1])


class RocCurve(BaseModel):
    """One-vs-rest ROC curve; thresholds descend, the curve runs (0,0) -> (1,1)."""
    thresholds: List[float]
    tpr: List[float]
    fpr: List[float]


class ThresholdPair(BaseModel):
    """Thresholds on the one-vs-rest scores of the two drowsy classes."""
    t_slight: float = Field(ge=0.0, le=1.0)
    t_modext: float = Field(ge=0.0, le=1.0)


class ThresholdChoice(BaseModel):
    threshold: float
    tpr: float
    fpr: float
    objective: float


class EvalReport(BaseModel):
    """Headline metrics for one model run on one split."""
    model: str
    n_samples: int
    macro_auc: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: List[List[int]]
    per_class_recall: List[float]
    thresholds: Optional[ThresholdPair] = None
    argmax_confusion: Optional[List[List[int]]] = None
    argmax_per_class_recall: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_report(self) -> "EvalReport":
        if sum(sum(row) for row in self.confusion) != self.n_samples:
            raise ValueError("confusion matrix does not sum to the sample count")
        for name in ("macro_auc", "accuracy", "precision", "recall", "f1"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0, 1]")
        return self


class GroundTruthSegment(BaseModel):
    """A run of frames sharing one true drowsiness state; end is exclusive."""
    state: RawLabel
    start_frame: int = Field(ge=0)
    end_frame: int

    @model_validator(mode="after")
    def _check_order(self) -> "GroundTruthSegment":
        if self.end_frame <= self.start_frame:
            raise ValueError("segment end must be after its start")
        return self


class ParticipantProfile(BaseModel):
    """Synthetic driver identity: demographics, camera offsets and resting expression."""
    participant_id: str
    gender: str
    age_bracket: str
    ethnicity: str
    yaw_offset: float
    pitch_offset: float
    roll_offset: float
    baselines: Dict[str, float]
    # Scales how far each drowsy signature departs from the alert one.
    drowsiness_gain: float = Field(default=1.0, gt=0.0)


LayerKind = Literal[
    "Dense", "LeakyReLU", "Conv1D", "Conv2D", "LSTM", "Dropout", "GlobalAvgPool",
    "Flatten", "Reshape", "Transpose", "LastTimestep",
]


class LayerSpec(BaseModel):
    """One layer of a sequential network; only the sizes its kind uses are set."""
    kind: LayerKind
    units: Optional[int] = Field(default=None, ge=1)
    kernel: Optional[List[int]] = None
    stride: Optional[List[int]] = None
    rate: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    slope: Optional[float] = None
    shape: Optional[List[int]] = None
    axes: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check_sizes(self) -> "LayerSpec":
        if self.kind in ("Dense", "Conv1D", "Conv2D", "LSTM") and self.units is None:
            raise ValueError(f"{self.kind} layer needs units")
        if self.kind in ("Conv1D", "Conv2D"):
            rank = 1 if self.kind == "Conv1D" else 2
            if not self.kernel or len(self.kernel) != rank or min(self.kernel) < 1:
                raise ValueError(f"{self.kind} kernel must be {rank} positive sizes")
            if not self.stride or len(self.stride) != rank or min(self.stride) < 1:
                raise ValueError(f"{self.kind} stride must be {rank} sizes >= 1")
        if self.kind == "Dropout" and self.rate is None:
            raise ValueError("Dropout layer needs a rate")
        if self.kind == "Reshape" and not self.shape:
            raise ValueError("Reshape layer needs a target shape")
        if self.kind == "Transpose" and not self.axes:
            raise ValueError("Transpose layer needs axes")
        return self


class ModelSpec(BaseModel):
    """A named sequential architecture with its per-sample input and output shapes."""
    name: str
    layers: List[LayerSpec]
    input_shape: List[int]
    output_shape: List[int]
    # Number of leading layers that form the encoder (autoencoder only).
    encoder_layers: Optional[int] = None


class TrainingHistory(BaseModel):
    """Per-epoch mean losses; validation loss is recorded, never used for selection."""
    train_loss: List[float] = Field(default_factory=list)
    val_loss: List[Optional[float]] = Field(default_factory=list)
    class_counts: Optional[List[int]] = None
    seconds: float = 0.0


class PipelineState(TypedDict):
    """State threaded through the run-all workflow."""
    # Inputs
    workdir: str
    config: Dict[str, Any]
    models: List[str]

    # Artifacts
    corpus_manifest: Optional[Dict[str, Any]]
    split_manifest: Optional[Dict[str, Any]]
    checkpoints: Dict[str, str]
    thresholds: Dict[str, Dict[str, Any]]
    evaluations: Dict[str, Dict[str, Any]]
    report_path: Optional[str]

    # Metadata
    processing_errors: List[str]
    error_code: Optional[str]
    processing_time: Optional[float]
    node_times: Dict[str, float]
