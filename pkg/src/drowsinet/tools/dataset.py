import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..errors import ConfigurationError, DegenerateWindowError, FrameParseError, FrameValidationError
from ..models.state import (
    CHANNELS,
    N_CHANNELS,
    N_STEPS,
    STD_FLOOR,
    ChannelNormalizer,
    DatasetSplit,
    FrameRecord,
    MergedLabel,
    RawLabel,
    SampleDescriptor,
    SampleSet,
    Window,
)

logger = logging.getLogger(__name__)

FRAME_HEADER: List[str] = [
    "participant_id", "video_id", "frame_index", "tracked",
    *CHANNELS,
    "raw_label", "consensus",
]

GridSource = Union[Sequence[SampleDescriptor], SampleSet, np.ndarray]


def parse_frames(stream: Iterable[str]) -> List[FrameRecord]:
    """
    Parse a frame CSV stream into FrameRecords, in file order.

    Args:
        stream: Text lines of one frame CSV, header first

    Returns:
        One FrameRecord per data row; untracked frames carry zeroed channels

    Raises:
        FrameParseError: header mismatch, wrong column count or non-numeric field
        FrameValidationError: a tracked frame has a channel outside its range
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FrameParseError("empty frame file, header missing", line=1)
    if [h.strip() for h in header] != FRAME_HEADER:
        raise FrameParseError("header does not match the frame schema", line=1)

    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(FRAME_HEADER):
            raise FrameParseError(f"expected {len(FRAME_HEADER)} columns, got {len(row)}", line=line)
        records.append(_parse_row(row, line))
    return records


def _parse_row(row: List[str], line: int) -> FrameRecord:
    participant_id, video_id = row[0], row[1]
    try:
        frame_index = int(row[2])
        tracked = _parse_flag(row[3], "tracked")
        channels = tuple(float(v) for v in row[4:4 + N_CHANNELS])
        raw_text = row[4 + N_CHANNELS].strip()
        raw_label = None if raw_text in ("NA", "") else RawLabel(int(raw_text))
        consensus = _parse_flag(row[5 + N_CHANNELS], "consensus")
    except ValueError as e:
        raise FrameParseError(f"malformed field: {e}", line=line)

    if not tracked:
        channels = (0.0,) * N_CHANNELS
    elif not all(np.isfinite(channels)):
        raise FrameParseError("non-finite channel value", line=line)

    try:
        return FrameRecord(
            participant_id=participant_id,
            video_id=video_id,
            frame_index=frame_index,
            channels=channels,
            raw_label=raw_label,
            tracked=tracked,
            consensus=consensus,
        )
    except ValidationError as e:
        raise FrameValidationError(e.errors()[0]["msg"], line=line)


def _parse_flag(text: str, name: str) -> bool:
    text = text.strip()
    if text not in ("0", "1"):
        raise ValueError(f"{name} must be 0 or 1, got {text!r}")
    return text == "1"


def read_frame_file(path: Union[str, Path]) -> List[FrameRecord]:
    """Read one per-video frame CSV from disk."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return parse_frames(handle)


def merge_label(raw: RawLabel) -> MergedLabel:
    """Fuse the two most severe raw levels into one training class."""
    return MergedLabel(min(int(raw), int(MergedLabel.MOD_EXT)))


def _group_by_video(frames: Sequence[FrameRecord]) -> Dict[Tuple[str, str], List[FrameRecord]]:
    videos: Dict[Tuple[str, str], List[FrameRecord]] = {}
    for frame in frames:
        videos.setdefault((frame.participant_id, frame.video_id), []).append(frame)
    return videos


def _label_runs(labels: np.ndarray, frame_index: np.ndarray) -> List[Tuple[int, int]]:
    """Half-open [start, end) runs of one usable label over contiguous frame indices."""
    if len(labels) == 0:
        return []
    breaks = np.flatnonzero(
        (labels[1:] != labels[:-1]) | (frame_index[1:] != frame_index[:-1] + 1)
    ) + 1
    bounds = np.concatenate([[0], breaks, [len(labels)]])
    return [
        (int(start), int(end))
        for start, end in zip(bounds[:-1], bounds[1:])
        if labels[start] >= 0
    ]


def extract_windows(
    frames: Sequence[FrameRecord],
    window_frames: int = 300,
    stride_alert: int = 75,
    stride_drowsy: int = 5,
    max_untracked_fraction: float = 0.2,
) -> List[Window]:
    """
    Cut single-label windows of consecutive frames with class-specific strides.

    Frames without a consensus label break a run, so no window spans a label
    transition or a no-majority frame. Windows with more than
    ``max_untracked_fraction`` untracked frames are dropped.
    """
    if window_frames <= 0:
        raise ConfigurationError("window_frames must be positive")

    windows: List[Window] = []
    for (participant_id, video_id), video in _group_by_video(frames).items():
        values = np.array([f.channels for f in video], dtype=np.float64)
        tracked = np.array([f.tracked for f in video], dtype=bool)
        index = np.array([f.frame_index for f in video], dtype=np.int64)
        labels = np.array([
            int(merge_label(f.raw_label)) if f.raw_label is not None and f.consensus else -1
            for f in video
        ], dtype=np.int64)

        for start, end in _label_runs(labels, index):
            label = MergedLabel(int(labels[start]))
            stride = stride_alert if label == MergedLabel.ALERT else stride_drowsy
            for s in range(start, end - window_frames + 1, stride):
                mask = tracked[s:s + window_frames]
                if np.count_nonzero(~mask) > max_untracked_fraction * window_frames:
                    continue
                windows.append(Window(
                    block=values[s:s + window_frames].copy(),
                    label=label,
                    tracked=mask.copy(),
                    participant_id=participant_id,
                    video_id=video_id,
                    start_frame=int(index[s]),
                ))
    logger.debug("extracted %d windows from %d frames", len(windows), len(frames))
    return windows


def impute_untracked(block: np.ndarray, tracked: np.ndarray) -> np.ndarray:
    """Forward-fill untracked rows from the last tracked frame, then backward-fill the head."""
    tracked = np.asarray(tracked, dtype=bool)
    if tracked.all():
        return np.array(block, dtype=np.float64)
    if not tracked.any():
        raise DegenerateWindowError("window has no tracked frames to impute from")
    positions = np.where(tracked, np.arange(len(tracked)), -1)
    source = np.maximum.accumulate(positions)
    source[source < 0] = int(np.argmax(tracked))
    return np.array(block, dtype=np.float64)[source]


def resample_window(block: np.ndarray, target_len: int = N_STEPS) -> np.ndarray:
    """
    Linearly resample a T x 18 block to a channel-major 18 x target_len grid.

    Each channel is interpolated at positions i * (T - 1) / (target_len - 1).
    The upper half is measured from the last frame, so resampling a reversed
    block gives exactly the reversed grid.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] < 2:
        raise DegenerateWindowError(f"need at least 2 frames to resample, got shape {block.shape}")
    if target_len < 2:
        raise DegenerateWindowError("target length must be at least 2")

    n_frames = block.shape[0]
    positions = np.arange(target_len // 2) * (n_frames - 1) / (target_len - 1)
    lower = np.minimum(np.floor(positions).astype(np.int64), n_frames - 2)
    frac = (positions - lower)[:, None]
    parts = [_lerp(block[lower], block[lower + 1], frac)]
    if target_len % 2:
        middle = (target_len // 2) * (n_frames - 1) / (target_len - 1)
        k = min(int(np.floor(middle)), n_frames - 2)
        f = middle - k
        y0, y1 = block[k], block[k + 1]
        parts.append(np.clip((1.0 - f) * y0 + f * y1, np.minimum(y0, y1), np.maximum(y0, y1))[None, :])
    parts.append(_lerp(block[n_frames - 1 - lower], block[n_frames - 2 - lower], frac)[::-1])
    return np.ascontiguousarray(np.concatenate(parts).T)


def _lerp(y0: np.ndarray, y1: np.ndarray, frac: np.ndarray) -> np.ndarray:
    return np.clip(y0 + frac * (y1 - y0), np.minimum(y0, y1), np.maximum(y0, y1))


def window_to_sample(window: Window, target_len: int = N_STEPS) -> SampleDescriptor:
    block = impute_untracked(window.block, window.tracked)
    return SampleDescriptor(
        grid=resample_window(block, target_len),
        label=window.label,
        participant_id=window.participant_id,
        video_id=window.video_id,
        start_frame=window.start_frame,
    )


def split_by_participant(
    samples: Sequence[SampleDescriptor],
    n_test_participants: int = 10,
    val_fraction: float = 0.25,
    seed: int = 0,
) -> DatasetSplit:
    """
    Hold out whole participants for test, then split the rest into train/val.

    The validation set takes the prefix of the shuffled remaining roster whose
    sample count is closest to ``val_fraction`` of the remaining samples.
    """
    assignment = participant_assignment(
        [s.participant_id for s in samples], n_test_participants, val_fraction, seed
    )
    buckets: Dict[str, List[SampleDescriptor]] = {"train": [], "val": [], "test": []}
    for sample in samples:
        buckets[assignment[sample.participant_id]].append(sample)
    return DatasetSplit(**buckets)


def participant_assignment(
    participant_ids: Sequence[str],
    n_test_participants: int = 10,
    val_fraction: float = 0.25,
    seed: int = 0,
) -> Dict[str, str]:
    """Map each participant id to 'train', 'val' or 'test'."""
    counts: Dict[str, int] = {}
    for pid in participant_ids:
        counts[pid] = counts.get(pid, 0) + 1
    roster = sorted(counts)
    if len(roster) < n_test_participants + 2:
        raise ConfigurationError(
            f"need at least {n_test_participants + 2} participants, got {len(roster)}"
        )

    rng = np.random.default_rng(seed)
    shuffled = [roster[i] for i in rng.permutation(len(roster))]
    test, remaining = shuffled[:n_test_participants], shuffled[n_test_participants:]

    cumulative = np.cumsum([counts[pid] for pid in remaining])[:-1]
    target = val_fraction * sum(counts[pid] for pid in remaining)
    n_val = int(np.argmin(np.abs(cumulative - target))) + 1

    assignment = {pid: "test" for pid in test}
    assignment.update({pid: "val" for pid in remaining[:n_val]})
    assignment.update({pid: "train" for pid in remaining[n_val:]})
    return assignment


def _as_grids(source: GridSource) -> np.ndarray:
    if isinstance(source, SampleSet):
        return source.grids
    if isinstance(source, np.ndarray):
        return source
    return np.stack([s.grid for s in source])


def fit_normalizer(train: GridSource) -> ChannelNormalizer:
    """Per-channel mean and population std over every training cell of that channel."""
    grids = _as_grids(train)
    if len(grids) == 0:
        raise ConfigurationError("cannot fit a normalizer on an empty training split")
    mean = grids.mean(axis=(0, 2))
    std = np.maximum(grids.std(axis=(0, 2)), STD_FLOOR)
    return ChannelNormalizer(mean=mean.tolist(), std=std.tolist())


def fit_feature_scaler(matrix: np.ndarray) -> ChannelNormalizer:
    """Column-wise z-score parameters for an N x D feature matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or len(matrix) == 0:
        raise ConfigurationError("feature scaler needs a non-empty N x D matrix")
    std = np.maximum(matrix.std(axis=0), STD_FLOOR)
    return ChannelNormalizer(mean=matrix.mean(axis=0).tolist(), std=std.tolist())


def normalize_array(normalizer: ChannelNormalizer, array: np.ndarray, axis: int = 1) -> np.ndarray:
    """Apply (x - mean) / std along ``axis`` of an array."""
    array = np.asarray(array, dtype=np.float64)
    shape = [1] * array.ndim
    shape[axis] = -1
    mean = np.asarray(normalizer.mean).reshape(shape)
    std = np.asarray(normalizer.std).reshape(shape)
    return (array - mean) / std


def apply_normalizer(normalizer: ChannelNormalizer, sample: SampleDescriptor) -> SampleDescriptor:
    grid = normalize_array(normalizer, sample.grid, axis=0)
    return sample.model_copy(update={"grid": grid})


def normalize_sample_set(normalizer: Optional[ChannelNormalizer], samples: SampleSet) -> SampleSet:
    if normalizer is None:
        return samples
    return samples.model_copy(update={
        "grids": normalize_array(normalizer, samples.grids, axis=1),
        "normalized": True,
    })
