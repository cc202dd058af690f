import logging
import time
from typing import Any, Dict, List, Optional

from ..errors import ConfigurationError, DegenerateWindowError
from ..models.config import RunConfig
from ..models.state import ChannelNormalizer, PipelineState, SampleDescriptor, SampleSet
from ..tools.dataset import (
    extract_windows,
    fit_normalizer,
    read_frame_file,
    split_by_participant,
    window_to_sample,
)
from ..tools.featurize import class_feature_distributions, write_feature_dump
from ..tools.storage import read_json, save_sample_set, write_json
from ..utils.monitoring import trace_node

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def load_corpus_samples(config: RunConfig) -> List[SampleDescriptor]:
    """Parse every frame CSV in the corpus directory and cut it into samples."""
    corpus = config.corpus_path
    files = sorted(corpus.glob("*.csv")) if corpus.is_dir() else []
    if not files:
        raise ConfigurationError(f"no frame CSV files found in {corpus}; run generate first")

    window = config.window
    samples: List[SampleDescriptor] = []
    for path in files:
        windows = extract_windows(
            read_frame_file(path),
            window_frames=window.window_frames,
            stride_alert=window.stride_alert,
            stride_drowsy=window.stride_drowsy,
            max_untracked_fraction=window.max_untracked_fraction,
        )
        for w in windows:
            try:
                samples.append(window_to_sample(w, window.target_len))
            except DegenerateWindowError as e:
                logger.warning("skipping window %s@%d: %s", w.video_id, w.start_frame, e)
    logger.info("cut %d samples from %d videos", len(samples), len(files))
    return samples


def run_prepare(config: RunConfig) -> Dict[str, Any]:
    """
    Window, split and normalize the corpus, then persist the prepared dataset.

    Returns:
        The split manifest that was written next to the sample files
    """
    samples = load_corpus_samples(config)
    split = split_by_participant(
        samples,
        n_test_participants=config.split.n_test_participants,
        val_fraction=config.split.val_fraction,
        seed=config.split.seed,
    )

    out = config.dataset_path
    sets = {name: SampleSet.from_samples(getattr(split, name), split=name) for name in SPLITS}
    for name, sample_set in sets.items():
        if len(sample_set) == 0:
            raise ConfigurationError(f"the {name} split is empty")
        save_sample_set(sample_set, out)
        if config.dump_features:
            write_feature_dump(sample_set, out / f"{name}_features.csv")

    normalizer = fit_normalizer(sets["train"]) if config.normalize else None
    write_json(out / "normalizer.json", {"normalizer": normalizer.model_dump() if normalizer else None})

    everything = SampleSet.from_samples(samples, split="all")
    class_feature_distributions(everything).to_csv(
        out / "feature_distributions.csv", index=False, float_format="%.6f", lineterminator="\n"
    )

    manifest = {
        "seed": config.split.seed,
        "participants": {name: sorted(split.participants(name)) for name in SPLITS},
        "assignments": {
            pid: name for name in SPLITS for pid in sorted(split.participants(name))
        },
        "n_samples": {name: len(sets[name]) for name in SPLITS},
        "class_counts": {name: sets[name].class_counts() for name in SPLITS},
        "normalized": normalizer is not None,
        "config": config.model_dump(mode="json"),
    }
    write_json(out / "split_manifest.json", manifest)
    return manifest


def load_normalizer(config: RunConfig) -> Optional[ChannelNormalizer]:
    payload = read_json(config.dataset_path / "normalizer.json")["normalizer"]
    return ChannelNormalizer(**payload) if payload else None


def summarize_split(manifest: Dict[str, Any]) -> List[str]:
    lines = [f"{'split':<8}{'participants':>14}{'samples':>10}{'alert':>8}{'slight':>8}{'mod_ext':>9}"]
    for name in SPLITS:
        counts = manifest["class_counts"][name]
        lines.append(
            f"{name:<8}{len(manifest['participants'][name]):>14}{manifest['n_samples'][name]:>10}"
            f"{counts[0]:>8}{counts[1]:>8}{counts[2]:>9}"
        )
    return lines


@trace_node("prepare")
def prepare_node(state: PipelineState) -> Dict[str, Any]:
    start_time = time.time()
    try:
        manifest = run_prepare(RunConfig(**state["config"]))
        for line in summarize_split(manifest):
            print(line)
        return {**state, "split_manifest": manifest}
    except Exception as e:
        logger.debug("prepare failed after %.1fs", time.time() - start_time, exc_info=True)
        return {
            **state,
            "split_manifest": None,
            "error_code": getattr(e, "code", "error"),
            "processing_errors": state.get("processing_errors", []) + [f"Error in prepare_node: {e}"],
        }
