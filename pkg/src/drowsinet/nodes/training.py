import logging
import time
from pathlib import Path
from typing import Any, Dict, List

from ..models.config import RunConfig
from ..models.state import CHANNELS, PipelineState
from ..tools.classifiers import CHECKPOINT_FILE, fit_model, parse_run, run_name
from ..tools.featurize import feature_names
from ..tools.forest import feature_importance
from ..tools.storage import load_sample_set, write_json
from ..utils.monitoring import trace_node
from .preparation import load_normalizer

logger = logging.getLogger(__name__)

IMPORTANCE_FILE = "importance.json"


def run_dir_for(config: RunConfig, run: str) -> Path:
    return config.runs_path / run


def run_train(config: RunConfig, run: str) -> Dict[str, Any]:
    """
    Fit one run on the prepared train split and write its checkpoint and log.

    Returns:
        The training log, with the checkpoint path added
    """
    model, _ = parse_run(run)
    dataset = config.dataset_path
    train = load_sample_set(dataset, "train")
    val = load_sample_set(dataset, "val")
    trained, log = fit_model(run, train, val, config, load_normalizer(config))

    run_dir = run_dir_for(config, run)
    echo = config.model_dump(mode="json")
    written = trained.save(run_dir, echo)
    log["checkpoints"] = [p.name for p in written]
    log["config"] = echo

    if model == "rf-baseline":
        importance = feature_importance(trained.estimator)
        write_json(run_dir / IMPORTANCE_FILE, {
            "per_feature": dict(zip(feature_names(), importance.per_feature)),
            "per_channel": dict(zip(CHANNELS, importance.per_channel)),
            "ranked_channels": [name for name, _ in importance.ranked_channels()],
        })
        log["importance"] = IMPORTANCE_FILE

    write_json(run_dir / "training_log.json", log)
    log["checkpoint"] = str(run_dir / CHECKPOINT_FILE)
    return log


def summarize_training(log: Dict[str, Any]) -> List[str]:
    lines = [f"Trained {log['run']} on class counts {log['class_counts']}"]
    if "class_counts_after_smote" in log:
        lines.append(f"  after SMOTE: {log['class_counts_after_smote']}")
    if "forest" in log:
        stats = log["forest"]
        lines.append(f"  {stats['n_trees']} trees, mean {stats['mean_nodes']:.0f} nodes, "
                     f"depth {stats['max_depth_reached']}")
    if "history" in log:
        losses = log["history"]["train_loss"]
        lines.append(f"  train loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} epochs")
    lines.append(f"  checkpoint: {log['checkpoint']}")
    return lines


def scheduled_runs(config: RunConfig) -> List[str]:
    """
    Runs trained by run-all: every configured model, plus the SMOTE variant of conv2d-raw.

    With ``smote_enabled`` every model trains as its SMOTE variant instead.
    """
    runs = [run_name(model, config.smote_enabled) for model in config.models]
    extra = run_name("conv2d-raw", True)
    if config.include_smote_run and "conv2d-raw" in config.models and extra not in runs:
        runs.append(extra)
    return runs


@trace_node("train")
def train_node(state: PipelineState) -> Dict[str, Any]:
    """Train every scheduled run; stops at the first failure."""
    start_time = time.time()
    checkpoints = dict(state.get("checkpoints", {}))
    try:
        config = RunConfig(**state["config"])
        for run in state["models"]:
            log = run_train(config, run)
            for line in summarize_training(log):
                print(line)
            checkpoints[run] = log["checkpoint"]
        return {**state, "checkpoints": checkpoints}
    except Exception as e:
        logger.debug("training failed after %.1fs", time.time() - start_time, exc_info=True)
        return {
            **state,
            "checkpoints": checkpoints,
            "error_code": getattr(e, "code", "error"),
            "processing_errors": state.get("processing_errors", []) + [f"Error in train_node: {e}"],
        }