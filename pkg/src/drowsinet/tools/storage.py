import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from ..errors import ConfigurationError
from ..models.state import SampleSet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    """Write a JSON document with stable key order and full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, allow_nan=False)
        handle.write("\n")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"required file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def save_sample_set(samples: SampleSet, directory: PathLike) -> Dict[str, Path]:
    """Persist one split as a grid array plus a provenance index CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grids_path = directory / f"{samples.split}_grids.npy"
    index_path = directory / f"{samples.split}_index.csv"

    np.save(grids_path, np.ascontiguousarray(samples.grids, dtype=np.float64))
    index = pd.DataFrame({
        "participant_id": samples.participant_ids,
        "video_id": samples.video_ids,
        "start_frame": samples.start_frames,
        "label": samples.labels.astype(int),
        "synthetic": samples.synthetic.astype(int),
    })
    index.to_csv(index_path, index=False, lineterminator="\n")
    logger.info("saved %d %s samples to %s", len(samples), samples.split, directory)
    return {"grids": grids_path, "index": index_path}


def load_sample_set(directory: PathLike, split: str, normalized: bool = False) -> SampleSet:
    directory = Path(directory)
    grids_path = directory / f"{split}_grids.npy"
    index_path = directory / f"{split}_index.csv"
    if not grids_path.exists() or not index_path.exists():
        raise ConfigurationError(f"prepared split '{split}' not found in {directory}; run prepare first")

    grids = np.load(grids_path)
    index = pd.read_csv(index_path, dtype={"participant_id": str, "video_id": str})
    return SampleSet(
        grids=grids,
        labels=index["label"].to_numpy(dtype=np.int64),
        participant_ids=index["participant_id"].tolist(),
        video_ids=index["video_id"].tolist(),
        start_frames=index["start_frame"].astype(int).tolist(),
        synthetic=index["synthetic"].to_numpy(dtype=bool),
        split=split,
        normalized=normalized,
    )
