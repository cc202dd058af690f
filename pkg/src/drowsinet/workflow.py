from typing import Any, Dict, Optional

from langgraph.graph import END, StateGraph

from .models.config import RunConfig
from .models.state import PipelineState
from .nodes.evaluation import evaluate_node, tune_node
from .nodes.generation import generate_node
from .nodes.preparation import prepare_node
from .nodes.reporting import report_node
from .nodes.training import scheduled_runs, train_node

STAGES = ("generate", "prepare", "train", "tune", "evaluate", "report")


def continue_or_stop(next_stage: str):
    """Conditional edge: stop the pipeline as soon as a node has recorded an error."""
    def route(state: PipelineState) -> str:
        return END if state.get("processing_errors") else next_stage
    return route


def create_pipeline_workflow() -> StateGraph:
    """
    Create the LangGraph workflow behind ``run-all``.

    Returns:
        Configured StateGraph running generate -> prepare -> train -> tune -> evaluate -> report
    """
    workflow = StateGraph(PipelineState)

    workflow.add_node("generate", generate_node)
    workflow.add_node("prepare", prepare_node)
    workflow.add_node("train", train_node)
    workflow.add_node("tune", tune_node)
    workflow.add_node("evaluate", evaluate_node)
    workflow.add_node("report", report_node)

    workflow.set_entry_point("generate")
    for stage, next_stage in zip(STAGES, STAGES[1:]):
        workflow.add_conditional_edges(
            stage, continue_or_stop(next_stage), {next_stage: next_stage, END: END}
        )
    workflow.add_edge("report", END)
    return workflow


class DrowsinessPipeline:
    """Runs the full generate-to-report pipeline for one RunConfig."""

    def __init__(self):
        self.workflow = create_pipeline_workflow()
        self.app = self.workflow.compile()

    def initial_state(self, config: RunConfig) -> PipelineState:
        return PipelineState(
            workdir=config.workdir,
            config=config.model_dump(),
            models=scheduled_runs(config),
            corpus_manifest=None,
            split_manifest=None,
            checkpoints={},
            thresholds={},
            evaluations={},
            report_path=None,
            processing_errors=[],
            error_code=None,
            processing_time=None,
            node_times={},
        )

    def run(self, config: RunConfig) -> Dict[str, Any]:
        return self.app.invoke(self.initial_state(config))

    def get_summary(self, result: Dict[str, Any]) -> str:
        """Human-readable summary of a finished pipeline run."""
        parts = []
        if result.get("evaluations"):
            parts.append(f"Evaluated {len(result['evaluations'])} runs:")
            for run, report in sorted(result["evaluations"].items()):
                parts.append(f"  {run:<20} macro AUC {report['macro_auc']:.3f}")
        if result.get("report_path"):
            parts.append(f"Report: {result['report_path']}")
        if result.get("node_times"):
            timing = ", ".join(f"{name} {seconds:.1f}s" for name, seconds in result["node_times"].items())
            parts.append(f"Stage times: {timing}")
        if result.get("processing_errors"):
            parts.append(f"Processing issues: {len(result['processing_errors'])}")
        return "\n".join(parts) if parts else "Pipeline finished without output."


def run_pipeline(config: Optional[RunConfig] = None) -> Dict[str, Any]:
    return DrowsinessPipeline().run(config or RunConfig())
