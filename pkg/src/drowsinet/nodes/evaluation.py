import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..errors import ConfigurationError
from ..models.config import RunConfig
from ..models.state import EvalReport, MergedLabel, PipelineState, ThresholdPair
from ..tools.classifiers import TrainedModel
from ..tools.metrics import CLASS_NAMES, evaluate_scores, render_confusion, tune_threshold
from ..tools.storage import load_sample_set, read_json, write_json
from ..utils.monitoring import trace_node
from .training import run_dir_for

logger = logging.getLogger(__name__)

THRESHOLDS_FILE = "thresholds.json"
EVALUATION_FILE = "evaluation.json"


def run_tune(config: RunConfig, run: str) -> Dict[str, Any]:
    """
    Choose one-vs-rest thresholds for Slight and ModExt on validation scores.

    Test data is never read here.
    """
    run_dir = run_dir_for(config, run)
    model = TrainedModel.load(run_dir)
    val = load_sample_set(config.dataset_path, "val")
    scores = model.predict_scores(val)

    choices = {}
    for label in (MergedLabel.SLIGHT, MergedLabel.MOD_EXT):
        choices[CLASS_NAMES[label]] = tune_threshold(
            scores[:, label], val.labels == label, config.threshold_objective
        )
    pair = ThresholdPair(t_slight=choices["slight"].threshold, t_modext=choices["mod_ext"].threshold)
    payload = {
        "run": run,
        "objective": config.threshold_objective,
        "thresholds": pair.model_dump(),
        "validation": {name: choice.model_dump() for name, choice in choices.items()},
        "config": config.model_dump(mode="json"),
    }
    write_json(run_dir / THRESHOLDS_FILE, payload)
    return payload


def load_thresholds(path: Union[str, Path]) -> ThresholdPair:
    return ThresholdPair(**read_json(path)["thresholds"])


def run_evaluate(config: RunConfig, run: str,
                 thresholds_path: Optional[Union[str, Path]] = None) -> EvalReport:
    """
    Score the test split; argmax decisions, or the severity rule when a thresholds file is given.
    """
    run_dir = run_dir_for(config, run)
    model = TrainedModel.load(run_dir)
    thresholds = None
    if thresholds_path is not None:
        if not Path(thresholds_path).exists():
            raise ConfigurationError(f"thresholds file not found: {thresholds_path}; run tune first")
        thresholds = load_thresholds(thresholds_path)

    test = load_sample_set(config.dataset_path, "test")
    scores = model.predict_scores(test)
    report = evaluate_scores(run, scores, test.labels, thresholds)

    payload = {"report": report.model_dump(), "config": config.model_dump(mode="json")}
    if (run_dir / "importance.json").exists():
        payload["importance"] = f"runs/{run}/importance.json"
    write_json(run_dir / EVALUATION_FILE, payload)
    return report


def summarize_tuning(payload: Dict[str, Any]) -> List[str]:
    lines = [f"Thresholds for {payload['run']} ({payload['objective']} objective)"]
    for name, choice in payload["validation"].items():
        lines.append(f"  {name:<8} t={choice['threshold']:.4f} tpr={choice['tpr']:.3f} "
                     f"fpr={choice['fpr']:.3f} objective={choice['objective']:.3f}")
    return lines


def summarize_evaluation(report: EvalReport) -> List[str]:
    lines = [
        f"{report.model}: AUC {report.macro_auc:.3f}  Acc {report.accuracy:.3f}  "
        f"Pre {report.precision:.3f}  Rec {report.recall:.3f}  F1 {report.f1:.3f}"
    ]
    if report.argmax_confusion is not None:
        lines.append(render_confusion(report.argmax_confusion, "before thresholding (argmax)"))
        lines.append(render_confusion(report.confusion, "after thresholding"))
        before = np.round(report.argmax_per_class_recall, 3).tolist()
        after = np.round(report.per_class_recall, 3).tolist()
        lines.append(f"per-class recall {before} -> {after}")
    else:
        lines.append(render_confusion(report.confusion, "argmax decisions"))
    return lines


@trace_node("tune")
def tune_node(state: PipelineState) -> Dict[str, Any]:
    start_time = time.time()
    thresholds = dict(state.get("thresholds", {}))
    try:
        config = RunConfig(**state["config"])
        if config.tune_thresholds:
            for run in state["models"]:
                payload = run_tune(config, run)
                thresholds[run] = payload["thresholds"]
                for line in summarize_tuning(payload):
                    print(line)
        return {**state, "thresholds": thresholds}
    except Exception as e:
        logger.debug("tuning failed after %.1fs", time.time() - start_time, exc_info=True)
        return {
            **state,
            "thresholds": thresholds,
            "error_code": getattr(e, "code", "error"),
            "processing_errors": state.get("processing_errors", []) + [f"Error in tune_node: {e}"],
        }


@trace_node("evaluate")
def evaluate_node(state: PipelineState) -> Dict[str, Any]:
    start_time = time.time()
    evaluations = dict(state.get("evaluations", {}))
    try:
        config = RunConfig(**state["config"])
        for run in state["models"]:
            path = run_dir_for(config, run) / THRESHOLDS_FILE if run in state.get("thresholds", {}) else None
            report = run_evaluate(config, run, path)
            evaluations[run] = report.model_dump()
            for line in summarize_evaluation(report):
                print(line)
        return {**state, "evaluations": evaluations}
    except Exception as e:
        logger.debug("evaluation failed after %.1fs", time.time() - start_time, exc_info=True)
        return {
            **state,
            "evaluations": evaluations,
            "error_code": getattr(e, "code", "error"),
            "processing_errors": state.get("processing_errors", []) + [f"Error in evaluate_node: {e}"],
        }
