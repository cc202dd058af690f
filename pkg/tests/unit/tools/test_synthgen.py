import json
import pytest
import numpy as np
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent.parent / "src"))

from drowsinet.models.config import AnnotatorConfig, GeneratorConfig
from drowsinet.models.state import CHANNEL_HIGH, CHANNEL_LOW, CHANNELS, N_CHANNELS, GroundTruthSegment, RawLabel
from drowsinet.tools.dataset import read_frame_file
from drowsinet.tools.synthgen import (
    consensus_labels,
    generate_corpus,
    majority_vote,
    make_participant_profile,
    render_channel_matrix,
    render_channels,
    simulate_annotators,
    simulate_states,
)


@pytest.fixture
def generator_config():
    return GeneratorConfig(
        n_participants=2, video_frames=300, dwell_seconds=[2.0, 1.0, 1.0, 1.0], window_frames=30, seed=7
    )


class TestStateWalk:
    """Test the semi-Markov ground-truth walk."""

    def test_segments_tile_the_video(self, generator_config):
        segments = simulate_states(generator_config, seed=1)
        assert segments[0].start_frame == 0
        assert segments[0].state == RawLabel.ALERT
        assert segments[-1].end_frame == generator_config.video_frames
        for previous, current in zip(segments, segments[1:]):
            assert current.start_frame == previous.end_frame

    def test_transitions_are_adjacent(self, generator_config):
        segments = simulate_states(generator_config.model_copy(update={"video_frames": 3000}), seed=2)
        assert len(segments) > 1
        for previous, current in zip(segments, segments[1:]):
            assert abs(int(current.state) - int(previous.state)) == 1

    def test_infinite_dwell_holds_state(self):
        config = GeneratorConfig(video_frames=500, dwell_seconds=[float("inf"), 1.0, 1.0, 1.0])
        segments = simulate_states(config, seed=0)
        assert len(segments) == 1
        assert (segments[0].start_frame, segments[0].end_frame) == (0, 500)

    def test_deterministic_for_a_seed(self, generator_config):
        assert simulate_states(generator_config, seed=5) == simulate_states(generator_config, seed=5)

    def test_default_walk_is_mostly_alert(self):
        config = GeneratorConfig()
        frames = np.zeros(4)
        for seed in range(200):
            for segment in simulate_states(config, seed=seed):
                frames[int(segment.state)] += segment.end_frame - segment.start_frame
        alert, slight, moderate, extreme = frames
        assert alert > 3 * slight
        assert slight > moderate > extreme > 0


class TestRendering:
    """Test participant profiles and channel rendering."""

    def test_profile_ids(self):
        assert make_participant_profile(0, seed=1).participant_id == "P001"
        assert make_participant_profile(41, seed=1).participant_id == "P042"

    def test_drowsiness_gain_range(self):
        gains = [make_participant_profile(i, seed=i).drowsiness_gain for i in range(50)]
        assert all(0.6 <= gain <= 1.4 for gain in gains)
        assert len(set(gains)) == 50

    def test_gain_scales_drowsy_frames_only(self, generator_config):
        segments = [
            GroundTruthSegment(state=RawLabel.ALERT, start_frame=0, end_frame=150),
            GroundTruthSegment(state=RawLabel.SLIGHTLY_DROWSY, start_frame=150, end_frame=300),
        ]
        profile = make_participant_profile(0, seed=5)
        low, _ = render_channel_matrix(segments, profile.model_copy(update={"drowsiness_gain": 0.6}),
                                       generator_config, seed=5)
        high, _ = render_channel_matrix(segments, profile.model_copy(update={"drowsiness_gain": 1.4}),
                                        generator_config, seed=5)
        np.testing.assert_array_equal(low[:150], high[:150])
        column = CHANNELS.index("eye_closure")
        assert high[150:, column].mean() > low[150:, column].mean()

    def test_values_within_channel_ranges(self, generator_config):
        segments = simulate_states(generator_config, seed=3)
        profile = make_participant_profile(0, seed=3)
        values, tracked = render_channel_matrix(segments, profile, generator_config, seed=3)
        assert values.shape == (generator_config.video_frames, N_CHANNELS)
        assert tracked.dtype == bool
        assert np.all(values >= CHANNEL_LOW)
        assert np.all(values <= CHANNEL_HIGH)

    def test_untracked_frames_carry_zeros(self, generator_config):
        config = generator_config.model_copy(update={"untracked_rate": 0.05})
        segments = simulate_states(config, seed=4)
        frames = render_channels(segments, make_participant_profile(0, seed=4), config, seed=4)
        lost = [f for f in frames if not f.tracked]
        assert lost
        assert all(f.channels == (0.0,) * N_CHANNELS for f in lost)
        assert [f.frame_index for f in frames] == list(range(config.video_frames))


class TestAnnotators:
    """Test simulated annotation and majority voting."""

    def test_perfect_annotators_match_truth(self, generator_config):
        segments = simulate_states(generator_config, seed=6)
        config = AnnotatorConfig(n_annotators=3, boundary_jitter_frames=0.0, mislabel_prob=0.0)
        tracks = simulate_annotators(segments, config, seed=6)
        truth = np.concatenate([[int(s.state)] * (s.end_frame - s.start_frame) for s in segments])
        for track in tracks:
            np.testing.assert_array_equal(track, truth)

    def test_majority_vote(self):
        assert majority_vote([1, 1, 2]) == RawLabel.SLIGHTLY_DROWSY
        assert majority_vote([0, 1, 2]) is None
        assert majority_vote([1, 1, 2, 2]) is None

    def test_consensus_labels(self):
        tracks = np.array([[0, 1, 2], [0, 1, 3], [1, 2, 3]])
        assert consensus_labels(tracks).tolist() == [0, 1, 3]

    def test_consensus_without_majority(self):
        tracks = np.array([[0], [1], [2]])
        assert consensus_labels(tracks).tolist() == [-1]


class TestGenerateCorpus:
    """Test corpus files and the manifest."""

    def test_writes_one_csv_per_video(self, tmp_path, generator_config):
        manifest = generate_corpus(generator_config, tmp_path / "corpus")
        files = sorted(p.name for p in (tmp_path / "corpus").glob("*.csv"))
        assert files == ["P001_V1.csv", "P002_V1.csv"]
        assert manifest["n_videos"] == 2
        frames = read_frame_file(tmp_path / "corpus" / "P001_V1.csv")
        assert len(frames) == generator_config.video_frames

    def test_manifest_counts(self, tmp_path, generator_config):
        manifest = generate_corpus(generator_config, tmp_path)
        counts = manifest["class_frame_counts"]
        assert sum(counts["ground_truth"].values()) == 2 * generator_config.video_frames
        assert sum(counts["consensus"].values()) + counts["no_consensus"] == 2 * generator_config.video_frames
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk["config"]["seed"] == 7
        assert [p["participant_id"] for p in on_disk["participants"]] == ["P001", "P002"]

    def test_same_seed_same_bytes(self, tmp_path, generator_config):
        generate_corpus(generator_config, tmp_path / "a")
        generate_corpus(generator_config, tmp_path / "b")
        assert (tmp_path / "a" / "P002_V1.csv").read_bytes() == (tmp_path / "b" / "P002_V1.csv").read_bytes()

    def test_different_seed_different_corpus(self, tmp_path, generator_config):
        generate_corpus(generator_config, tmp_path / "a")
        generate_corpus(generator_config.model_copy(update={"seed": 8}), tmp_path / "b")
        assert (tmp_path / "a" / "P001_V1.csv").read_bytes() != (tmp_path / "b" / "P001_V1.csv").read_bytes()
