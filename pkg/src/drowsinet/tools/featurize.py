import warnings
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from ..errors import ShapeError
from ..models.state import (
    CHANNELS,
    N_CHANNELS,
    STATISTICS,
    FeatureVector108,
    MergedLabel,
    SampleDescriptor,
    SampleSet,
)

# Below this second central moment a series is treated as constant.
ZERO_VARIANCE = 1e-12

# Channels whose per-class distributions are summarised for the prepare report.
DISTRIBUTION_CHANNELS = ("yaw", "pitch", "roll", "eye_closure", "mouth_open", "yawn")


def feature_names() -> List[str]:
    """Column names `<channel>_<stat>` in feature-vector order."""
    return [f"{channel}_{stat}" for channel in CHANNELS for stat in STATISTICS]


def _statistics(series: np.ndarray) -> np.ndarray:
    """Six statistics over the last axis: mean, max, min, std, skewness, excess kurtosis."""
    # sorted first, so the result does not depend on time order
    series = np.sort(np.asarray(series, dtype=np.float64), axis=-1)
    high = series.max(axis=-1)
    low = series.min(axis=-1)
    mean = series.mean(axis=-1)
    m2 = ((series - mean[..., None]) ** 2).mean(axis=-1)
    flat = m2 < ZERO_VARIANCE

    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("ignore", RuntimeWarning)
        skew = stats.skew(series, axis=-1, bias=True)
        kurt = stats.kurtosis(series, axis=-1, fisher=True, bias=True)

    return np.stack([
        np.clip(mean, low, high),
        high,
        low,
        np.where(high == low, 0.0, np.sqrt(m2)),
        np.where(flat, 0.0, skew),
        np.where(flat, 0.0, kurt),
    ], axis=-1)


def channel_statistics(series: Sequence[float]) -> np.ndarray:
    """
    Summarise one channel's time series with six population statistics.

    Skewness is m3 / m2^1.5 and kurtosis is m4 / m2^2 - 3; both are 0 for
    (near-)constant series.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or len(series) < 2:
        raise ShapeError(f"channel statistics need a 1-D series of length >= 2, got {series.shape}")
    return _statistics(series)


def featurize_grids(grids: np.ndarray) -> np.ndarray:
    """N x 18 x T grids -> N x 108 statistics, channel-major."""
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim != 3 or grids.shape[1] != N_CHANNELS or grids.shape[2] < 2:
        raise ShapeError(f"expected N x {N_CHANNELS} x T grids, got {grids.shape}")
    return _statistics(grids).reshape(len(grids), -1)


def featurize_sample(sample: SampleDescriptor) -> FeatureVector108:
    values = _statistics(sample.grid).reshape(-1)
    return FeatureVector108(
        values=values,
        label=sample.label,
        participant_id=sample.participant_id,
        video_id=sample.video_id,
        start_frame=sample.start_frame,
    )


def feature_frame(samples: SampleSet, features: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Tabulate 108-D features with labels, provenance and synthetic flags."""
    if features is None:
        features = featurize_grids(samples.grids)
    frame = pd.DataFrame(features, columns=feature_names())
    frame["label"] = samples.labels.astype(int)
    frame["participant_id"] = samples.participant_ids
    frame["video_id"] = samples.video_ids
    frame["start_frame"] = samples.start_frames
    frame["synthetic"] = samples.synthetic.astype(int)
    return frame


def write_feature_dump(samples: SampleSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feature_frame(samples).to_csv(path, index=False, lineterminator="\n")
    return path


def class_feature_distributions(
    samples: SampleSet,
    channels: Sequence[str] = DISTRIBUTION_CHANNELS,
) -> pd.DataFrame:
    """Quartiles of per-sample channel means, grouped by merged class."""
    rows = []
    means = samples.grids.mean(axis=2)
    for channel in channels:
        column = means[:, CHANNELS.index(channel)]
        for label in MergedLabel:
            values = column[samples.labels == int(label)]
            if len(values) == 0:
                continue
            q1, median, q3 = np.percentile(values, [25, 50, 75])
            rows.append({
                "channel": channel,
                "label": label.name.lower(),
                "count": len(values),
                "mean": float(values.mean()),
                "min": float(values.min()),
                "q1": float(q1),
                "median": float(median),
                "q3": float(q3),
                "max": float(values.max()),
            })
    return pd.DataFrame(rows)
