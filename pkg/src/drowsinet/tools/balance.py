import logging
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import ContractViolationError, ShapeError
from ..models.config import SmoteConfig
from ..models.state import N_CLASSES, SampleSet

logger = logging.getLogger(__name__)


def knn(points: np.ndarray, query_index: int, k: int) -> np.ndarray:
    """
    Indices of the k Euclidean nearest neighbours of one point, itself excluded.

    Equidistant neighbours are ordered by lower index.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < k + 1:
        raise ShapeError(f"need at least {k + 1} points for {k} neighbours, got {len(points)}")
    distances = np.sum((points - points[query_index]) ** 2, axis=1)
    distances[query_index] = np.inf
    return np.argsort(distances, kind="stable")[:k]


def interpolate_class(
    points: np.ndarray,
    n_new: int,
    k_neighbors: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw ``n_new`` SMOTE points inside one class.

    Returns:
        Synthetic points [n_new, D] and their parent index pairs [n_new, 2]
    """
    n = len(points)
    if n < 2:
        raise ContractViolationError(f"SMOTE needs at least 2 members per class, got {n}")
    k = min(k_neighbors, n - 1)
    neighbours: Dict[int, np.ndarray] = {}
    synthetic = np.empty((n_new, points.shape[1]))
    parents = np.empty((n_new, 2), dtype=np.int64)
    for row in range(n_new):
        i = int(rng.integers(n))
        if i not in neighbours:
            neighbours[i] = knn(points, i, k)
        j = int(neighbours[i][rng.integers(k)])
        lam = rng.random()
        x, x_nn = points[i], points[j]
        synthetic[row] = np.clip(x + lam * (x_nn - x), np.minimum(x, x_nn), np.maximum(x, x_nn))
        parents[row] = (i, j)
    return synthetic, parents


def smote_oversample(samples: SampleSet, config: Optional[SmoteConfig] = None) -> SampleSet:
    """
    Equalise class counts of a training split with SMOTE on flattened grids.

    Originals come first and unchanged; synthetic grids follow, tagged ``synthetic``
    and carrying the provenance of their first parent.

    Raises:
        ContractViolationError: the split is not 'train', or a minority class has fewer than 2 members
    """
    config = config or SmoteConfig()
    if samples.split != "train":
        raise ContractViolationError(f"SMOTE may only be applied to the train split, got '{samples.split}'")

    counts = np.bincount(samples.labels, minlength=N_CLASSES)
    majority = int(counts.max())
    flat = samples.grids.reshape(len(samples), -1)
    grid_shape = samples.grids.shape[1:]
    seeds = np.random.SeedSequence(config.seed).spawn(N_CLASSES)

    grids = [samples.grids]
    labels = [samples.labels]
    participants = list(samples.participant_ids)
    videos = list(samples.video_ids)
    starts = list(samples.start_frames)
    flags = [samples.synthetic]
    for label in range(N_CLASSES):
        n_new = majority - int(counts[label])
        if n_new == 0:
            continue
        members = np.flatnonzero(samples.labels == label)
        points, parents = interpolate_class(flat[members], n_new, config.k_neighbors,
                                            np.random.default_rng(seeds[label]))
        grids.append(points.reshape((n_new,) + grid_shape))
        labels.append(np.full(n_new, label, dtype=np.int64))
        flags.append(np.ones(n_new, dtype=bool))
        for i in members[parents[:, 0]]:
            participants.append(samples.participant_ids[i])
            videos.append(samples.video_ids[i])
            starts.append(samples.start_frames[i])
        logger.info("SMOTE added %d synthetic samples to class %d", n_new, label)

    return SampleSet(
        grids=np.concatenate(grids),
        labels=np.concatenate(labels),
        participant_ids=participants,
        video_ids=videos,
        start_frames=starts,
        synthetic=np.concatenate(flags),
        split=samples.split,
        normalized=samples.normalized,
    )
