import logging
import time
from typing import Any, Dict, List

from ..models.config import RunConfig
from ..models.state import PipelineState
from ..tools.synthgen import generate_corpus
from ..utils.monitoring import trace_node

logger = logging.getLogger(__name__)


def run_generate(config: RunConfig) -> Dict[str, Any]:
    """Write the synthetic corpus into the configured corpus directory."""
    return generate_corpus(config.generator, config.corpus_path)


def summarize_manifest(manifest: Dict[str, Any]) -> List[str]:
    counts = manifest["class_frame_counts"]
    lines = [
        f"Generated {manifest['n_videos']} videos for {manifest['n_participants']} participants",
        f"{'class':<20}{'truth frames':>14}{'consensus':>12}{'minutes':>10}",
    ]
    for name, truth in counts["ground_truth"].items():
        lines.append(
            f"{name:<20}{truth:>14}{counts['consensus'][name]:>12}"
            f"{manifest['consensus_minutes'][name]:>10.2f}"
        )
    lines.append(f"{'no consensus':<20}{'':>14}{counts['no_consensus']:>12}")
    return lines


@trace_node("generate")
def generate_node(state: PipelineState) -> Dict[str, Any]:
    """
    Graph node producing the synthetic corpus.

    Args:
        state: Current PipelineState carrying the run config

    Returns:
        Updated state with the corpus manifest, or an appended processing error
    """
    start_time = time.time()
    try:
        manifest = run_generate(RunConfig(**state["config"]))
        for line in summarize_manifest(manifest):
            print(line)
        return {**state, "corpus_manifest": manifest}
    except Exception as e:
        logger.debug("corpus generation failed after %.1fs", time.time() - start_time, exc_info=True)
        return {
            **state,
            "corpus_manifest": None,
            "error_code": getattr(e, "code", "error"),
            "processing_errors": state.get("processing_errors", []) + [f"Error in generate_node: {e}"],
        }
