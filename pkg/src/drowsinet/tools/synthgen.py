"""
Synthetic drowsy-driving corpus generator.

Each video follows a semi-Markov walk over the four raw drowsiness states,
renders 18 facial channels from per-state behavioural signatures, and is
labelled by several simulated annotators whose majority vote becomes the
consensus label written to the frame CSV.
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models.config import AnnotatorConfig, GeneratorConfig
from ..models.state import (
    CHANNEL_HIGH,
    CHANNEL_LOW,
    CHANNELS,
    N_CHANNELS,
    FrameRecord,
    GroundTruthSegment,
    ParticipantProfile,
    RawLabel,
)
from .dataset import FRAME_HEADER
from .storage import write_json

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]

GENDERS = ("female", "male")
AGE_BRACKETS = ("18-24", "25-34", "35-44", "45-54", "55+")
ETHNICITIES = ("asian", "black", "hispanic", "middle-eastern", "white", "mixed")

# (low, high) of the uniform draw for each participant's resting expression.
BASELINE_RANGES: Dict[str, Tuple[float, float]] = {
    "brow_furrow": (0.0, 8.0),
    "brow_raise": (0.0, 8.0),
    "cheek_raise": (0.0, 6.0),
    "mouth_open": (0.0, 6.0),
    "nose_wrinkle": (0.0, 4.0),
    "smile": (0.0, 12.0),
    "upper_lip_raise": (0.0, 4.0),
    "valence": (-10.0, 10.0),
    "anger": (0.0, 3.0),
    "disgust": (0.0, 3.0),
    "joy": (0.0, 10.0),
    "surprise": (0.0, 3.0),
}

# Measurement noise standard deviation per channel at noise_scale 1.
NOISE_SD = np.array([
    1.0 if name in ("yaw", "pitch", "roll") else 2.0 if name == "valence" else 1.5
    for name in CHANNELS
])

BLINK_LEVEL = 100.0
BLINK_EYE_CLOSURE = 95.0
YAWN_LEVEL = 80.0
YAWN_MOUTH_OPEN = 65.0
PLATEAU_EYE_CLOSURE = 92.0
PLATEAU_DROOP = 12.0
JERK_FRAMES = 6

# Per-participant scale on how strongly drowsiness shows.
DROWSINESS_GAIN_RANGE = (0.6, 1.4)

COL = {name: i for i, name in enumerate(CHANNELS)}


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _next_state(state: RawLabel, config: GeneratorConfig, rng: np.random.Generator) -> RawLabel:
    if state == RawLabel.ALERT:
        return RawLabel.SLIGHTLY_DROWSY
    if state == RawLabel.EXTREMELY_DROWSY:
        return RawLabel.MODERATELY_DROWSY
    escalate = config.escalation_prob[int(state) - 1]
    return RawLabel(int(state) + 1 if rng.random() < escalate else int(state) - 1)


def simulate_states(config: GeneratorConfig, seed: SeedLike = None) -> List[GroundTruthSegment]:
    """
    Walk the adjacent-severity state chain from Alert until the video is tiled.

    Dwell times are geometric with the configured per-state mean; an infinite
    mean keeps the current state to the end of the video.
    """
    rng = _rng(seed)
    n_frames = config.video_frames
    segments: List[GroundTruthSegment] = []
    state, position = RawLabel.ALERT, 0
    while position < n_frames:
        mean = config.dwell_seconds[state] * config.fps
        if not np.isfinite(mean):
            length = n_frames - position
        elif mean <= 1.0:
            length = 1
        else:
            length = int(rng.geometric(1.0 / mean))
        end = min(position + length, n_frames)
        segments.append(GroundTruthSegment(state=state, start_frame=position, end_frame=end))
        position = end
        state = _next_state(state, config, rng)
    return segments


def make_participant_profile(index: int, seed: SeedLike = None) -> ParticipantProfile:
    rng = _rng(seed)
    baselines = {name: float(rng.uniform(low, high)) for name, (low, high) in BASELINE_RANGES.items()}
    baselines.update(blink=0.0, yawn=0.0, eye_closure=float(rng.normal(0.0, 3.0)))
    return ParticipantProfile(
        participant_id=f"P{index + 1:03d}",
        gender=str(rng.choice(GENDERS)),
        age_bracket=str(rng.choice(AGE_BRACKETS)),
        ethnicity=str(rng.choice(ETHNICITIES)),
        yaw_offset=float(rng.normal(0.0, 8.0)),
        pitch_offset=float(rng.normal(0.0, 5.0)),
        roll_offset=float(rng.normal(0.0, 3.0)),
        baselines=baselines,
        drowsiness_gain=float(rng.uniform(*DROWSINESS_GAIN_RANGE)),
    )


def _state_track(segments: Sequence[GroundTruthSegment]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-frame state and frames elapsed since the segment started."""
    n_frames = segments[-1].end_frame
    states = np.empty(n_frames, dtype=np.int64)
    elapsed = np.empty(n_frames, dtype=np.float64)
    for segment in segments:
        states[segment.start_frame:segment.end_frame] = int(segment.state)
        elapsed[segment.start_frame:segment.end_frame] = np.arange(segment.end_frame - segment.start_frame)
    return states, elapsed


def _pulses(rng: np.random.Generator, start_prob: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Boolean box pulses started independently per frame."""
    active = np.zeros(len(start_prob), dtype=bool)
    for start in np.flatnonzero(rng.random(len(start_prob)) < start_prob):
        active[start:start + int(durations[start])] = True
    return active


def render_channel_matrix(
    segments: Sequence[GroundTruthSegment],
    profile: ParticipantProfile,
    config: GeneratorConfig,
    seed: SeedLike = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render T x 18 channel values and the tracked mask for one video.

    Returns:
        (values clamped to each channel's range, tracked flags)
    """
    rng = _rng(seed)
    fps = config.fps
    states, elapsed = _state_track(segments)
    n_frames = len(states)

    def signature(field: str) -> np.ndarray:
        return np.array([getattr(s, field) for s in config.signatures], dtype=np.float64)[states]

    def expressed(field: str) -> np.ndarray:
        per_state = np.array([getattr(s, field) for s in config.signatures], dtype=np.float64)
        per_state = per_state[0] + profile.drowsiness_gain * (per_state - per_state[0])
        return np.maximum(per_state, 0.0)[states]

    values = np.zeros((n_frames, N_CHANNELS))
    for name, value in profile.baselines.items():
        values[:, COL[name]] = value
    values[:, COL["yaw"]] = profile.yaw_offset
    values[:, COL["roll"]] = profile.roll_offset

    seconds = np.arange(n_frames) / fps
    phase = rng.uniform(0.0, 2.0 * np.pi)
    values[:, COL["pitch"]] = profile.pitch_offset + expressed("nod_amplitude") * np.sin(
        2.0 * np.pi * signature("nod_rate_hz") * seconds + phase
    )

    values[:, COL["eye_closure"]] += (
        expressed("eye_closure_base") + expressed("eye_closure_drift") * elapsed / fps
    )
    blinking = _pulses(rng, expressed("blink_rate_hz") / fps, signature("blink_frames"))
    values[blinking, COL["blink"]] = BLINK_LEVEL
    values[blinking, COL["eye_closure"]] = np.maximum(values[blinking, COL["eye_closure"]], BLINK_EYE_CLOSURE)

    yawning = _pulses(rng, signature("yawn_rate_hz") / fps, signature("yawn_frames"))
    values[yawning, COL["yawn"]] = YAWN_LEVEL
    values[yawning, COL["mouth_open"]] += YAWN_MOUTH_OPEN

    # Eye-closure plateaus with a drooping head, ended by an upright jerk.
    plateau = signature("plateau_frames")
    amplitude = signature("jerk_amplitude")
    for start in np.flatnonzero(rng.random(n_frames) < signature("jerk_rate_hz") / fps):
        end = start + int(plateau[start])
        values[start:end, COL["eye_closure"]] = PLATEAU_EYE_CLOSURE
        values[start:end, COL["pitch"]] -= PLATEAU_DROOP
        values[end:end + JERK_FRAMES, COL["pitch"]] += amplitude[start]

    values += rng.normal(size=values.shape) * (NOISE_SD * config.noise_scale)
    values = np.clip(values, CHANNEL_LOW, CHANNEL_HIGH)

    lost = _pulses(rng, np.full(n_frames, config.untracked_rate),
                   np.full(n_frames, config.untracked_burst_frames))
    return values, ~lost


def render_channels(
    segments: Sequence[GroundTruthSegment],
    profile: ParticipantProfile,
    config: GeneratorConfig,
    seed: SeedLike = None,
    video_id: str = "V1",
) -> List[FrameRecord]:
    """Render one video as FrameRecords labelled with the ground-truth state."""
    values, tracked = render_channel_matrix(segments, profile, config, seed)
    states, _ = _state_track(segments)
    return [
        FrameRecord(
            participant_id=profile.participant_id,
            video_id=video_id,
            frame_index=i,
            channels=tuple(values[i]) if tracked[i] else (0.0,) * N_CHANNELS,
            raw_label=RawLabel(int(states[i])),
            tracked=bool(tracked[i]),
        )
        for i in range(len(states))
    ]


def _mislabel(state: int, prob: float, rng: np.random.Generator) -> int:
    if rng.random() >= prob:
        return state
    if state == RawLabel.ALERT:
        return int(RawLabel.SLIGHTLY_DROWSY)
    if state == RawLabel.EXTREMELY_DROWSY:
        return int(RawLabel.MODERATELY_DROWSY)
    return state + (1 if rng.random() < 0.5 else -1)


def simulate_annotators(
    segments: Sequence[GroundTruthSegment],
    config: Optional[AnnotatorConfig] = None,
    seed: SeedLike = None,
) -> np.ndarray:
    """
    Per-frame label tracks [n_annotators, T].

    Every annotator jitters each interior boundary by a rounded Gaussian and may
    shift a whole segment to an adjacent severity level.
    """
    config = config or AnnotatorConfig()
    rng = _rng(seed)
    n_frames = segments[-1].end_frame
    bounds = np.array([s.end_frame for s in segments[:-1]], dtype=np.int64)
    tracks = np.empty((config.n_annotators, n_frames), dtype=np.int64)
    for annotator in range(config.n_annotators):
        jitter = np.rint(rng.normal(0.0, config.boundary_jitter_frames, size=len(bounds))).astype(np.int64)
        edges = np.maximum.accumulate(np.clip(bounds + jitter, 0, n_frames))
        edges = np.concatenate([[0], edges, [n_frames]])
        for i, segment in enumerate(segments):
            tracks[annotator, edges[i]:edges[i + 1]] = _mislabel(
                int(segment.state), config.mislabel_prob, rng
            )
    return tracks


def majority_vote(labels: Sequence[int]) -> Optional[RawLabel]:
    """The label held by a strict majority of annotators, else None."""
    label, count = Counter(int(v) for v in labels).most_common(1)[0]
    return RawLabel(label) if 2 * count > len(labels) else None


def consensus_labels(tracks: np.ndarray) -> np.ndarray:
    """Vectorised majority vote over annotator tracks; -1 marks no consensus."""
    counts = np.stack([(tracks == label).sum(axis=0) for label in RawLabel])
    has_majority = 2 * counts.max(axis=0) > tracks.shape[0]
    return np.where(has_majority, counts.argmax(axis=0), -1)


def _frame_table(profile: ParticipantProfile, video_id: str, values: np.ndarray,
                 tracked: np.ndarray, consensus: np.ndarray) -> pd.DataFrame:
    values = np.where(tracked[:, None], values, 0.0)
    frame = pd.DataFrame(values, columns=list(CHANNELS))
    frame.insert(0, "participant_id", profile.participant_id)
    frame.insert(1, "video_id", video_id)
    frame.insert(2, "frame_index", np.arange(len(values)))
    frame.insert(3, "tracked", tracked.astype(int))
    frame["raw_label"] = np.where(consensus >= 0, consensus.astype(str), "NA")
    frame["consensus"] = (consensus >= 0).astype(int)
    return frame[FRAME_HEADER]


def _counts(labels: np.ndarray) -> Dict[str, int]:
    return {state.name.lower(): int(np.sum(labels == int(state))) for state in RawLabel}


def generate_corpus(config: GeneratorConfig, out_dir: Union[str, Path]) -> Dict[str, Any]:
    """
    Write one frame CSV per video plus ``manifest.json`` into ``out_dir``.

    Returns:
        The manifest: roster with demographics, per-video and total frame counts
        per raw class, consensus minutes per class and the config echo
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    participants: List[Dict[str, Any]] = []
    videos: List[Dict[str, Any]] = []
    truth_total = np.zeros(len(RawLabel), dtype=np.int64)
    consensus_total = np.zeros(len(RawLabel), dtype=np.int64)
    no_consensus = 0

    for index, participant_seed in enumerate(np.random.SeedSequence(config.seed).spawn(config.n_participants)):
        profile_seed, *video_seeds = participant_seed.spawn(1 + config.videos_per_participant)
        profile = make_participant_profile(index, profile_seed)
        video_ids = []
        for number, video_seed in enumerate(video_seeds, start=1):
            rng = np.random.default_rng(video_seed)
            video_id = f"{profile.participant_id}_V{number}"
            segments = simulate_states(config, rng)
            values, tracked = render_channel_matrix(segments, profile, config, rng)
            consensus = consensus_labels(simulate_annotators(segments, config.annotators, rng))
            states, _ = _state_track(segments)

            file_name = f"{video_id}.csv"
            _frame_table(profile, video_id, values, tracked, consensus).to_csv(
                out_dir / file_name, index=False, float_format="%.4f", lineterminator="\n"
            )
            truth = _counts(states)
            agreed = _counts(consensus)
            truth_total += list(truth.values())
            consensus_total += list(agreed.values())
            no_consensus += int(np.sum(consensus < 0))
            video_ids.append(video_id)
            videos.append({
                "video_id": video_id,
                "participant_id": profile.participant_id,
                "file": file_name,
                "n_frames": len(states),
                "n_segments": len(segments),
                "untracked_frames": int(np.sum(~tracked)),
                "no_consensus_frames": int(np.sum(consensus < 0)),
                "ground_truth_frames": truth,
                "consensus_frames": agreed,
            })
        participants.append({**profile.model_dump(exclude={"baselines"}), "videos": video_ids})
        logger.debug("rendered participant %s", profile.participant_id)

    names = [state.name.lower() for state in RawLabel]
    manifest = {
        "format_version": 1,
        "seed": config.seed,
        "n_participants": config.n_participants,
        "n_videos": len(videos),
        "participants": participants,
        "videos": videos,
        "class_frame_counts": {
            "ground_truth": dict(zip(names, truth_total.tolist())),
            "consensus": dict(zip(names, consensus_total.tolist())),
            "no_consensus": no_consensus,
        },
        "consensus_minutes": {
            name: round(count / config.fps / 60.0, 3) for name, count in zip(names, consensus_total.tolist())
        },
        "config": config.model_dump(mode="json"),
    }
    write_json(out_dir / "manifest.json", manifest)
    logger.info("generated %d videos for %d participants in %s", len(videos), config.n_participants, out_dir)
    return manifest
