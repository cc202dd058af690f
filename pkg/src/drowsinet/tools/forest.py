import logging
import time
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..errors import NotFittedError, ShapeError, UndefinedMetricError
from ..models.config import ForestConfig
from ..models.state import N_CHANNELS, N_CLASSES, STATISTICS, FeatureVector108, ImportanceReport

logger = logging.getLogger(__name__)

# Splits must lower impurity by more than this to be kept.
MIN_DECREASE = 1e-12


class Split(NamedTuple):
    feature: int
    threshold: float
    decrease: float


def gini(class_counts: Sequence[int]) -> float:
    """Gini impurity 1 - sum(p_i^2) of a node's class counts."""
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise UndefinedMetricError("gini impurity of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    candidate_features: Sequence[int],
    n_classes: int = N_CLASSES,
) -> Optional[Split]:
    """
    Find the impurity-maximising split among candidate features.

    Thresholds are midpoints between consecutive distinct sorted values; rows
    with ``x <= threshold`` go left. Ties go to the lowest feature index, then
    the lowest threshold.

    Returns:
        The best Split, or None when no split lowers impurity
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n < 2:
        return None
    parent_counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    parent_gini = gini(parent_counts)
    if parent_gini == 0.0:
        return None

    onehot = np.eye(n_classes)[y]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left

    best: Optional[Split] = None
    for feature in sorted(int(f) for f in candidate_features):
        order = np.argsort(X[:, feature], kind="stable")
        xs = X[order, feature]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = parent_counts - left
        gini_left = 1.0 - np.sum((left / n_left) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right / n_right) ** 2, axis=1)
        decrease = parent_gini - (n_left[:, 0] / n) * gini_left - (n_right[:, 0] / n) * gini_right
        decrease[~valid] = -np.inf

        i = int(np.argmax(decrease))
        if best is None or decrease[i] > best.decrease:
            threshold = 0.5 * (xs[i] + xs[i + 1])
            if not (xs[i] <= threshold < xs[i + 1]):
                threshold = xs[i]
            best = Split(feature, float(threshold), float(decrease[i]))

    if best is None or best.decrease <= MIN_DECREASE:
        return None
    return best


class DecisionTree:
    """Array-backed CART tree; leaves have feature == -1."""

    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.counts: List[List[int]] = []
        self.decrease: List[float] = []
        self.depth: List[int] = []

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return max(self.depth) if self.depth else 0

    def _add_node(self, counts: np.ndarray, depth: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append([int(c) for c in counts])
        self.decrease.append(0.0)
        self.depth.append(depth)
        return self.n_nodes - 1

    def fit(self, X: np.ndarray, y: np.ndarray, config: ForestConfig,
            rng: np.random.Generator) -> "DecisionTree":
        n_features = X.shape[1]
        k = min(config.features_per_split, n_features)
        root = self._add_node(np.bincount(y, minlength=N_CLASSES), 0)
        stack = [(root, np.arange(len(y)))]
        while stack:
            node, rows = stack.pop()
            depth = self.depth[node]
            if (depth >= config.max_depth or len(rows) < config.min_samples_split
                    or gini(self.counts[node]) == 0.0):
                continue
            candidates = np.sort(rng.choice(n_features, size=k, replace=False))
            split = best_split(X[rows], y[rows], candidates)
            if split is None:
                continue
            go_left = X[rows, split.feature] <= split.threshold
            left_rows, right_rows = rows[go_left], rows[~go_left]
            self.feature[node] = split.feature
            self.threshold[node] = split.threshold
            self.decrease[node] = split.decrease
            self.left[node] = self._add_node(np.bincount(y[left_rows], minlength=N_CLASSES), depth + 1)
            self.right[node] = self._add_node(np.bincount(y[right_rows], minlength=N_CLASSES), depth + 1)
            stack.append((self.right[node], right_rows))
            stack.append((self.left[node], left_rows))
        return self

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            current = node[rows]
            go_left = X[rows, feature[current]] <= threshold[current]
            node[rows] = np.where(go_left, left[current], right[current])
            active = feature[node] >= 0
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=np.float64)[self.apply(X)]
        return counts / counts.sum(axis=1, keepdims=True)

    def importances(self, n_features: int) -> np.ndarray:
        """Impurity decrease per feature, each split weighted by its node's share of samples."""
        totals = np.zeros(n_features)
        counts = np.asarray(self.counts, dtype=np.float64).sum(axis=1)
        for node, feature in enumerate(self.feature):
            if feature >= 0:
                totals[feature] += counts[node] / counts[0] * self.decrease[node]
        return totals

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "counts": self.counts,
            "decrease": self.decrease,
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DecisionTree":
        tree = cls()
        tree.feature = [int(v) for v in payload["feature"]]
        tree.threshold = [float(v) for v in payload["threshold"]]
        tree.left = [int(v) for v in payload["left"]]
        tree.right = [int(v) for v in payload["right"]]
        tree.counts = [[int(c) for c in row] for row in payload["counts"]]
        tree.decrease = [float(v) for v in payload["decrease"]]
        tree.depth = [int(v) for v in payload["depth"]]
        return tree


class RandomForest:
    """Bagged CART trees with per-node feature subsampling and soft voting."""

    def __init__(self, config: Optional[ForestConfig] = None):
        self.config = config or ForestConfig()
        self.trees: List[DecisionTree] = []
        self.n_features: Optional[int] = None

    @property
    def is_fitted(self) -> bool:
        return bool(self.trees)

    def _check_fitted(self):
        if not self.is_fitted:
            raise NotFittedError("random forest has not been fitted")

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
            raise ShapeError(f"need a non-empty N x D matrix with N labels, got {X.shape} and {y.shape}")
        start = time.time()
        n = len(y)
        self.n_features = X.shape[1]
        self.trees = []
        for child in np.random.SeedSequence(self.config.seed).spawn(self.config.n_trees):
            rng = np.random.default_rng(child)
            rows = rng.integers(0, n, size=n) if self.config.bootstrap else np.arange(n)
            self.trees.append(DecisionTree().fit(X[rows], y[rows], self.config, rng))
        logger.info(
            "fitted %d trees on %d rows in %.1fs (mean nodes %.0f)",
            len(self.trees), n, time.time() - start,
            np.mean([t.n_nodes for t in self.trees]),
        )
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Average of the trees' leaf class frequencies, one row per input."""
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {X.shape[1]}")
        proba = np.mean([tree.predict_proba(X) for tree in self.trees], axis=0)
        return proba / proba.sum(axis=1, keepdims=True)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def build_stats(self) -> Dict[str, Any]:
        self._check_fitted()
        return {
            "n_trees": len(self.trees),
            "mean_nodes": float(np.mean([t.n_nodes for t in self.trees])),
            "max_depth_reached": int(max(t.max_depth for t in self.trees)),
        }

    def to_dict(self) -> Dict[str, Any]:
        self._check_fitted()
        return {
            "config": self.config.model_dump(),
            "n_features": self.n_features,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RandomForest":
        forest = cls(ForestConfig(**payload["config"]))
        forest.n_features = int(payload["n_features"])
        forest.trees = [DecisionTree.from_dict(t) for t in payload["trees"]]
        return forest


def _stack(train: Union[np.ndarray, Sequence[FeatureVector108]],
           labels: Optional[np.ndarray]) -> tuple:
    if isinstance(train, np.ndarray):
        if labels is None:
            raise ShapeError("labels are required when training on a raw matrix")
        return train, np.asarray(labels)
    return np.stack([v.values for v in train]), np.array([int(v.label) for v in train])


def fit_forest(
    train: Union[np.ndarray, Sequence[FeatureVector108]],
    config: Optional[ForestConfig] = None,
    labels: Optional[np.ndarray] = None,
) -> RandomForest:
    X, y = _stack(train, labels)
    return RandomForest(config).fit(X, y)


def predict_proba(forest: RandomForest, x: Union[np.ndarray, FeatureVector108]) -> np.ndarray:
    """Class probabilities for a single feature vector."""
    values = x.values if isinstance(x, FeatureVector108) else np.asarray(x)
    return forest.predict_proba(values.reshape(1, -1))[0]


def feature_importance(forest: RandomForest) -> ImportanceReport:
    """Mean decrease in impurity per feature, plus sums over each channel's six statistics."""
    forest._check_fitted()
    per_feature = np.mean([t.importances(forest.n_features) for t in forest.trees], axis=0)
    total = per_feature.sum()
    if total > 0:
        per_feature = per_feature / total
    else:
        per_feature = np.full(forest.n_features, 1.0 / forest.n_features)

    if forest.n_features == N_CHANNELS * len(STATISTICS):
        per_channel = per_feature.reshape(N_CHANNELS, len(STATISTICS)).sum(axis=1)
    else:
        per_channel = per_feature.copy()
    return ImportanceReport(per_feature=per_feature.tolist(), per_channel=per_channel.tolist())
