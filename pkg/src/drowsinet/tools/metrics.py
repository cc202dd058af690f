from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from ..errors import ShapeError, UndefinedMetricError
from ..models.state import N_CLASSES, EvalReport, MergedLabel, RocCurve, ThresholdChoice, ThresholdPair

Objective = Literal["youden", "literal"]

TABLE_COLUMNS = ["AUC", "Acc", "Pre", "Rec", "F1"]
CLASS_NAMES = [label.name.lower() for label in MergedLabel]


def _binary_inputs(scores: Sequence[float], labels: Sequence[bool]):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise UndefinedMetricError("need at least one positive and one negative sample")
    return scores, labels


def binary_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 * P(pos == neg), from mid-ranks."""
    scores, labels = _binary_inputs(scores, labels)
    ranks = rankdata(scores, method="average")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(score_rows: np.ndarray, labels: Sequence[int]) -> float:
    """Unweighted mean of the one-vs-rest AUCs of the three classes."""
    score_rows = np.asarray(score_rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    missing = [CLASS_NAMES[c] for c in range(N_CLASSES) if not np.any(labels == c)]
    if missing:
        raise UndefinedMetricError(f"macro AUC needs every class present; missing: {', '.join(missing)}")
    return float(np.mean([binary_auc(score_rows[:, c], labels == c) for c in range(N_CLASSES)]))


def _rates(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray):
    """TPR and FPR of the rule ``score >= threshold`` for each threshold."""
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    tp = len(pos) - np.searchsorted(pos, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg, thresholds, side="left")
    return tp / len(pos), fp / len(neg)


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """ROC points for every distinct score, from above the maximum down to the minimum."""
    scores, labels = _binary_inputs(scores, labels)
    distinct = np.unique(scores)[::-1]
    thresholds = np.concatenate([[np.nextafter(distinct[0], np.inf)], distinct])
    tpr, fpr = _rates(scores, labels, thresholds)
    return RocCurve(thresholds=thresholds.tolist(), tpr=tpr.tolist(), fpr=fpr.tolist())


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """
    Ascending candidates: the minimum score, midpoints between consecutive distinct
    scores, and the next float above the maximum when that stays within [0, 1].
    """
    distinct = np.unique(scores)
    candidates = [distinct[:1], 0.5 * (distinct[:-1] + distinct[1:])]
    if distinct[-1] < 1.0:
        candidates.append([np.nextafter(distinct[-1], np.inf)])
    return np.concatenate(candidates)


def tune_threshold(scores: Sequence[float], labels: Sequence[bool],
                   objective: Objective = "youden") -> ThresholdChoice:
    """
    Pick the candidate threshold maximising the objective on validation scores.

    ``youden`` maximises TPR - FPR; ``literal`` maximises TPR - (1 - FPR).
    Ties go to the higher threshold.
    """
    scores, labels = _binary_inputs(scores, labels)
    thresholds = candidate_thresholds(scores)
    tpr, fpr = _rates(scores, labels, thresholds)
    if objective == "youden":
        values = tpr - fpr
    elif objective == "literal":
        values = tpr - (1.0 - fpr)
    else:
        raise ValueError(f"unknown threshold objective '{objective}'")
    best = len(values) - 1 - int(np.argmax(values[::-1]))
    return ThresholdChoice(threshold=float(thresholds[best]), tpr=float(tpr[best]),
                           fpr=float(fpr[best]), objective=float(values[best]))


def decide(scores: Sequence[float], thresholds: ThresholdPair) -> MergedLabel:
    """Severity-first rule: ModExt if its threshold is met, else Slight, else Alert."""
    if scores[MergedLabel.MOD_EXT] >= thresholds.t_modext:
        return MergedLabel.MOD_EXT
    if scores[MergedLabel.SLIGHT] >= thresholds.t_slight:
        return MergedLabel.SLIGHT
    return MergedLabel.ALERT


def decide_batch(score_rows: np.ndarray, thresholds: ThresholdPair) -> np.ndarray:
    score_rows = np.asarray(score_rows)
    return np.where(
        score_rows[:, MergedLabel.MOD_EXT] >= thresholds.t_modext, int(MergedLabel.MOD_EXT),
        np.where(score_rows[:, MergedLabel.SLIGHT] >= thresholds.t_slight, int(MergedLabel.SLIGHT),
                 int(MergedLabel.ALERT)),
    )


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def confusion_and_weighted_metrics(y_true: Sequence[int], y_pred: Sequence[int]) -> Dict[str, Any]:
    """
    Confusion matrix (rows true, columns predicted), accuracy and support-weighted
    precision, recall and F1; per-class ratios with a zero denominator are 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise UndefinedMetricError("cannot score an empty prediction set")
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"{len(y_true)} true labels but {len(y_pred)} predictions")

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    support = confusion.sum(axis=1).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    hits = np.diag(confusion).astype(np.float64)

    precision = _safe_divide(hits, predicted)
    recall = _safe_divide(hits, support)
    f1 = _safe_divide(2 * precision * recall, precision + recall)
    weights = support / support.sum()
    return {
        "confusion": confusion.tolist(),
        "accuracy": float(hits.sum() / len(y_true)),
        "precision": float(np.dot(weights, precision)),
        "recall": float(np.dot(weights, recall)),
        "f1": float(np.dot(weights, f1)),
        "per_class_precision": precision.tolist(),
        "per_class_recall": recall.tolist(),
    }


def evaluate_scores(model: str, score_rows: np.ndarray, labels: Sequence[int],
                    thresholds: Optional[ThresholdPair] = None) -> EvalReport:
    """Table-style report; argmax decisions, or the severity rule when thresholds are given."""
    labels = np.asarray(labels, dtype=np.int64)
    argmax = np.argmax(score_rows, axis=1)
    decided = argmax if thresholds is None else decide_batch(score_rows, thresholds)
    metrics = confusion_and_weighted_metrics(labels, decided)
    report = EvalReport(
        model=model,
        n_samples=len(labels),
        macro_auc=macro_auc(score_rows, labels),
        accuracy=metrics["accuracy"],
        precision=metrics["precision"],
        recall=metrics["recall"],
        f1=metrics["f1"],
        confusion=metrics["confusion"],
        per_class_recall=metrics["per_class_recall"],
        thresholds=thresholds,
    )
    if thresholds is not None:
        before = confusion_and_weighted_metrics(labels, argmax)
        report.argmax_confusion = before["confusion"]
        report.argmax_per_class_recall = before["per_class_recall"]
    return report


def report_frame(reports: List[EvalReport]) -> pd.DataFrame:
    """One row per model in metric-table column order, sorted by model name."""
    rows = [
        {"Model": r.model, "AUC": r.macro_auc, "Acc": r.accuracy, "Pre": r.precision,
         "Rec": r.recall, "F1": r.f1}
        for r in sorted(reports, key=lambda r: r.model)
    ]
    return pd.DataFrame(rows, columns=["Model"] + TABLE_COLUMNS)


def render_table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3f}")


def render_confusion(confusion: List[List[int]], title: str = "") -> str:
    frame = pd.DataFrame(
        confusion,
        index=[f"true {name}" for name in CLASS_NAMES],
        columns=[f"pred {name}" for name in CLASS_NAMES],
    )
    text = frame.to_string()
    return f"{title}\n{text}" if title else text
