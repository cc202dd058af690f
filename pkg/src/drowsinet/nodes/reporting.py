import logging
import time
from pathlib import Path
from typing import Any, Dict, List

from ..errors import ConfigurationError
from ..models.config import RunConfig
from ..models.state import EvalReport, PipelineState
from ..tools.metrics import render_confusion, render_table, report_frame
from ..tools.storage import read_json, write_json
from ..utils.monitoring import trace_node
from .evaluation import EVALUATION_FILE

logger = logging.getLogger(__name__)


def collect_evaluations(config: RunConfig) -> Dict[str, Dict[str, Any]]:
    """Evaluation payloads of every run directory, keyed by run name."""
    runs = config.runs_path
    paths = sorted(runs.glob(f"*/{EVALUATION_FILE}")) if runs.is_dir() else []
    return {path.parent.name: read_json(path) for path in paths}


def run_report(config: RunConfig) -> Path:
    """
    Consolidate every evaluated run into one comparison table.

    Writes report.txt (aligned table plus confusion matrices), report.csv and
    report.json under the report directory.
    """
    evaluations = collect_evaluations(config)
    if not evaluations:
        raise ConfigurationError(f"no evaluations found under {config.runs_path}; run evaluate first")

    reports = [EvalReport(**payload["report"]) for payload in evaluations.values()]
    frame = report_frame(reports)
    out = config.report_path
    out.mkdir(parents=True, exist_ok=True)

    sections: List[str] = [render_table(frame), ""]
    for report in sorted(reports, key=lambda r: r.model):
        if report.argmax_confusion is not None:
            sections.append(render_confusion(report.argmax_confusion, f"{report.model}: before thresholding"))
            sections.append(render_confusion(report.confusion, f"{report.model}: after thresholding"))
        else:
            sections.append(render_confusion(report.confusion, f"{report.model}: argmax decisions"))
        pointer = evaluations[report.model].get("importance")
        if pointer:
            sections.append(f"{report.model}: feature importance in {pointer}")
        sections.append("")

    (out / "report.txt").write_text("\n".join(sections), encoding="utf-8")
    frame.to_csv(out / "report.csv", index=False, float_format="%.6f", lineterminator="\n")
    write_json(out / "report.json", {
        "rows": [
            {**row, "importance": evaluations[row["Model"]].get("importance")}
            for row in frame.to_dict(orient="records")
        ],
        "reports": {r.model: r.model_dump() for r in reports},
    })
    logger.info("report for %d runs written to %s", len(reports), out)
    return out / "report.txt"


@trace_node("report")
def report_node(state: PipelineState) -> Dict[str, Any]:
    start_time = time.time()
    try:
        path = run_report(RunConfig(**state["config"]))
        print(path.read_text(encoding="utf-8"))
        return {**state, "report_path": str(path)}
    except Exception as e:
        logger.debug("report failed after %.1fs", time.time() - start_time, exc_info=True)
        return {
            **state,
            "report_path": None,
            "error_code": getattr(e, "code", "error"),
            "processing_errors": state.get("processing_errors", []) + [f"Error in report_node: {e}"],
        }
