"""
Test configuration and fixtures for drowsinet tests.
"""

import os
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from drowsinet.models.config import ForestConfig, GeneratorConfig, RunConfig, SplitConfig, TrainConfig, WindowConfig
from drowsinet.models.state import N_CHANNELS, N_STEPS, CHANNELS, PipelineState, SampleSet
from drowsinet.tools.dataset import FRAME_HEADER, fit_normalizer
from drowsinet.tools.storage import save_sample_set, write_json


def frame_row(participant_id: str = "P001", video_id: str = "P001_V1", frame_index: int = 0,
              tracked: bool = True, channels: Optional[Sequence[float]] = None,
              raw_label: Optional[int] = 0, consensus: bool = True) -> str:
    """One frame CSV row in FRAME_HEADER order."""
    values = [10.0] * N_CHANNELS if channels is None else list(channels)
    label = "NA" if raw_label is None else str(raw_label)
    fields = [participant_id, video_id, str(frame_index), "1" if tracked else "0",
              *(f"{v:.4f}" for v in values), label, "1" if consensus else "0"]
    return ",".join(fields)


def frame_csv(rows: List[str]) -> List[str]:
    """Header plus rows, as the lines a CSV reader consumes."""
    return [",".join(FRAME_HEADER) + "\n"] + [row + "\n" for row in rows]


def labelled_run(labels: Sequence[int], participant_id: str = "P001", video_id: str = "P001_V1",
                 start: int = 0) -> List[str]:
    """Consecutive tracked frames carrying the given raw labels."""
    return [
        frame_row(participant_id, video_id, start + i, raw_label=label)
        for i, label in enumerate(labels)
    ]


def make_sample_set(n_per_class: Sequence[int] = (30, 20, 10), split: str = "train",
                    participants: Sequence[str] = ("P001", "P002", "P003"),
                    seed: int = 0, separation: float = 3.0) -> SampleSet:
    """Grids whose class shifts the eye-closure and yawn channels, so the classes are learnable."""
    rng = np.random.default_rng(seed)
    grids, labels, pids = [], [], []
    eye, yawn = CHANNELS.index("eye_closure"), CHANNELS.index("yawn")
    for label, count in enumerate(n_per_class):
        for i in range(count):
            grid = rng.normal(size=(N_CHANNELS, N_STEPS))
            grid[eye] += separation * label
            grid[yawn] += 0.5 * separation * label * np.sin(np.linspace(0, 3, N_STEPS))
            grids.append(grid)
            labels.append(label)
            pids.append(participants[(i + label) % len(participants)])
    n = len(labels)
    return SampleSet(
        grids=np.array(grids).reshape(n, N_CHANNELS, N_STEPS),
        labels=np.array(labels, dtype=np.int64),
        participant_ids=pids,
        video_ids=[f"{p}_V1" for p in pids],
        start_frames=[5 * i for i in range(n)],
        synthetic=np.zeros(n, dtype=bool),
        split=split,
    )


def small_run_config(workdir: Path, **overrides) -> RunConfig:
    """A RunConfig sized for seconds-long tests."""
    fields = dict(
        workdir=str(workdir),
        generator=GeneratorConfig(
            n_participants=8, video_frames=900, dwell_seconds=[6.0, 4.0, 3.0, 3.0],
            window_frames=60,
        ),
        window=WindowConfig(window_frames=60, stride_alert=30, stride_drowsy=10),
        split=SplitConfig(n_test_participants=2),
        forest=ForestConfig(n_trees=5, max_depth=6),
        train=TrainConfig(epochs=2, batch_size=32),
        autoencoder_train=TrainConfig(epochs=1, batch_size=32),
    )
    fields.update(overrides)
    return RunConfig(**fields)


def pipeline_state(config: RunConfig, models: Sequence[str] = ("rf-baseline",), **fields) -> PipelineState:
    """A fresh PipelineState for node tests."""
    state = PipelineState(
        workdir=config.workdir,
        config=config.model_dump(),
        models=list(models),
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
    state.update(fields)
    return state


@pytest.fixture
def sample_set():
    """Learnable training split with an imbalanced 30/20/10 class mix."""
    return make_sample_set()


@pytest.fixture
def run_config(tmp_path):
    return small_run_config(tmp_path / "work")


@pytest.fixture
def prepared_workdir(run_config):
    """A work directory holding prepared train/val/test splits and their normalizer."""
    dataset = run_config.dataset_path
    train = make_sample_set((30, 20, 12), "train", ("P001", "P002", "P003"), seed=1)
    save_sample_set(train, dataset)
    save_sample_set(make_sample_set((10, 8, 6), "val", ("P004",), seed=2), dataset)
    save_sample_set(make_sample_set((12, 8, 6), "test", ("P005", "P006"), seed=3), dataset)
    write_json(dataset / "normalizer.json", {"normalizer": fit_normalizer(train).model_dump()})
    return run_config


@pytest.fixture(scope="session", autouse=True)
def setup_test_environment():
    """Keep tests independent of a developer's .env and tracing setup."""
    saved = {name: os.environ.pop(name, None) for name in ("LANGSMITH_API_KEY", "DROWSINET_WORKDIR")}
    os.environ["PYTEST_RUNNING"] = "1"

    yield

    for name, value in saved.items():
        if value is not None:
            os.environ[name] = value
    if "PYTEST_RUNNING" in os.environ:
        del os.environ["PYTEST_RUNNING"]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


# Markers for different test types
def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "unit: Unit tests")
    config.addinivalue_line("markers", "integration: Integration tests")
    config.addinivalue_line("markers", "slow: Slow tests")


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
