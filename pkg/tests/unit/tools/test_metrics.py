import pytest
import numpy as np
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent / "src"))

from drowsinet.errors import ShapeError, UndefinedMetricError
from drowsinet.models.state import MergedLabel, ThresholdPair
from drowsinet.tools.metrics import (
    binary_auc,
    candidate_thresholds,
    confusion_and_weighted_metrics,
    decide,
    decide_batch,
    evaluate_scores,
    macro_auc,
    render_confusion,
    render_table,
    report_frame,
    roc_curve,
    tune_threshold,
)


def _score_rows():
    labels = np.array([0, 0, 1, 1, 2, 2])
    rows = np.array([
        [0.8, 0.1, 0.1],
        [0.6, 0.3, 0.1],
        [0.5, 0.4, 0.1],
        [0.2, 0.7, 0.1],
        [0.3, 0.2, 0.5],
        [0.1, 0.2, 0.7],
    ])
    return rows, labels


def _pairwise_auc(scores, labels):
    """Mann-Whitney AUC by counting every positive/negative pair."""
    pos = scores[labels]
    neg = scores[~labels]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _random_binary_set(rng):
    """Scores and labels with both classes present; coarse scores force ties."""
    n = int(rng.integers(2, 60))
    scores = rng.random(n)
    if rng.random() < 0.5:
        scores = np.round(scores, 1)
    labels = rng.random(n) < rng.uniform(0.2, 0.8)
    labels[0], labels[1] = True, False
    return scores, labels


def _exhaustive_youden(scores, labels):
    distinct = sorted(set(scores.tolist()))
    candidates = [distinct[0]] + [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    if distinct[-1] < 1.0:
        candidates.append(np.nextafter(distinct[-1], np.inf))
    best_value, best_t = -np.inf, None
    for t in candidates:
        value = np.mean(scores[labels] >= t) - np.mean(scores[~labels] >= t)
        if value >= best_value:
            best_value, best_t = value, t
    return best_t, best_value


class TestAuc:
    """Test rank-based AUC."""

    def test_known_value(self):
        assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_perfect_ranking(self):
        assert binary_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_ties_count_half(self):
        assert binary_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == pytest.approx(0.5)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            binary_auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            binary_auc([0.1, 0.2, 0.3], [0, 1])

    def test_matches_pairwise_counting(self):
        rng = np.random.default_rng(20)
        for _ in range(200):
            scores, labels = _random_binary_set(rng)
            assert abs(binary_auc(scores, labels) - _pairwise_auc(scores, labels)) <= 1e-12

    def test_macro_auc_matches_pairwise_counting(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            rows = rng.dirichlet(np.ones(3), size=n)
            labels = np.concatenate([[0, 1, 2], rng.integers(0, 3, size=n - 3)])
            expected = np.mean([_pairwise_auc(rows[:, c], labels == c) for c in range(3)])
            assert abs(macro_auc(rows, labels) - expected) <= 1e-12

    def test_macro_auc_averages_classes(self):
        rows, labels = _score_rows()
        expected = np.mean([binary_auc(rows[:, c], labels == c) for c in range(3)])
        assert macro_auc(rows, labels) == pytest.approx(expected)

    def test_macro_auc_names_missing_class(self):
        rows, _ = _score_rows()
        with pytest.raises(UndefinedMetricError, match="mod_ext"):
            macro_auc(rows, [0, 0, 1, 1, 1, 0])

    def test_roc_curve_endpoints(self):
        curve = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
        assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
        assert curve.thresholds == sorted(curve.thresholds, reverse=True)


class TestThresholds:
    """Test candidate generation and threshold tuning."""

    def test_candidates(self):
        candidates = candidate_thresholds(np.array([0.2, 0.4, 0.4, 0.9]))
        np.testing.assert_allclose(candidates[:3], [0.2, 0.3, 0.65])
        assert candidates[3] == np.nextafter(0.9, np.inf)

    def test_no_candidate_above_one(self):
        candidates = candidate_thresholds(np.array([0.2, 1.0]))
        np.testing.assert_allclose(candidates, [0.2, 0.6])

    def test_youden_matches_exhaustive_search(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            scores, labels = _random_binary_set(rng)
            choice = tune_threshold(scores, labels)
            best_t, best_value = _exhaustive_youden(scores, labels)
            assert choice.threshold == best_t
            assert choice.objective == best_value
            assert choice.objective == pytest.approx(choice.tpr - choice.fpr)

    def test_ties_go_to_higher_threshold(self):
        choice = tune_threshold([0.1, 0.2, 0.3, 0.4], [0, 1, 0, 1])
        assert choice.threshold == pytest.approx(0.35)
        assert choice.objective == pytest.approx(0.5)

    def test_literal_objective(self):
        choice = tune_threshold([0.1, 0.2, 0.3, 0.4], [0, 1, 0, 1], objective="literal")
        assert choice.threshold == pytest.approx(0.1)
        assert choice.objective == pytest.approx(1.0)

    def test_unknown_objective(self):
        with pytest.raises(ValueError):
            tune_threshold([0.1, 0.9], [0, 1], objective="f1")


class TestDecisions:
    """Test the severity-first decision rule."""

    def test_modext_wins_when_met(self):
        assert decide([0.2, 0.5, 0.3], ThresholdPair(t_slight=0.4, t_modext=0.3)) == MergedLabel.MOD_EXT

    def test_slight_when_only_slight_met(self):
        assert decide([0.2, 0.5, 0.3], ThresholdPair(t_slight=0.4, t_modext=0.6)) == MergedLabel.SLIGHT

    def test_alert_fallback(self):
        assert decide([0.2, 0.5, 0.3], ThresholdPair(t_slight=0.9, t_modext=0.9)) == MergedLabel.ALERT

    def test_batch_matches_single(self):
        rows, _ = _score_rows()
        pair = ThresholdPair(t_slight=0.3, t_modext=0.4)
        assert decide_batch(rows, pair).tolist() == [int(decide(row, pair)) for row in rows]


class TestWeightedMetrics:
    """Test confusion matrices and support-weighted scores."""

    def test_known_values(self):
        metrics = confusion_and_weighted_metrics([0, 0, 1, 2], [0, 1, 1, 1])
        assert metrics["confusion"] == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]
        assert metrics["accuracy"] == pytest.approx(0.5)
        assert metrics["precision"] == pytest.approx(0.5 + 0.25 / 3.0)
        assert metrics["recall"] == pytest.approx(0.5)
        assert metrics["f1"] == pytest.approx(1.0 / 3.0 + 0.125)
        assert metrics["per_class_precision"][2] == 0.0

    def test_empty_input(self):
        with pytest.raises(UndefinedMetricError):
            confusion_and_weighted_metrics([], [])

    def test_evaluate_with_argmax(self):
        rows, labels = _score_rows()
        report = evaluate_scores("rf-baseline", rows, labels)
        assert report.n_samples == 6
        assert report.argmax_confusion is None
        assert report.accuracy == pytest.approx(5.0 / 6.0)

    def test_evaluate_with_thresholds_keeps_argmax_matrix(self):
        rows, labels = _score_rows()
        report = evaluate_scores("rf-baseline", rows, labels, ThresholdPair(t_slight=0.3, t_modext=0.4))
        assert report.thresholds is not None
        assert report.argmax_confusion is not None
        assert sum(map(sum, report.confusion)) == 6
        assert report.confusion != report.argmax_confusion


class TestReporting:
    """Test the comparison table and confusion rendering."""

    def test_frame_sorted_by_model(self):
        rows, labels = _score_rows()
        reports = [evaluate_scores(name, rows, labels) for name in ("mlp-raw", "conv1d-raw")]
        frame = report_frame(reports)
        assert frame["Model"].tolist() == ["conv1d-raw", "mlp-raw"]
        assert list(frame.columns) == ["Model", "AUC", "Acc", "Pre", "Rec", "F1"]
        assert "conv1d-raw" in render_table(frame)

    def test_confusion_rendering(self):
        text = render_confusion([[1, 0, 0], [0, 2, 0], [0, 0, 3]], title="test")
        assert text.startswith("test\n")
        assert "pred mod_ext" in text
        assert "true alert" in text
