"""Gesture windowing and the two-channel gesture state matrix.

A gesture window opens when the hand center stays at or above the chest
line for a run of frames, and closes once the hand stays below it long
enough (or the stream ends). Frames inside a window are sampled every
0.2 s; each sample contributes one pose-vector column and one
hand-center column.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyStream, LeftHandUnsupported, MalformedInput
from .landmarks import HandLandmarkFrame, Handedness, LandmarkStream
from .rules import (
    POSE_ROW_LABELS,
    RuleThresholds,
    encode_pose_vector,
    hand_center,
    validate_pose_vector,
)

logger = logging.getLogger(__name__)

SAMPLE_INTERVAL = 0.2
# Absorbs float error so e.g. a 1.0 s window yields exactly 6 samples.
_TIME_EPS = 1e-9

_CHANNEL2_LABELS = ("center_x", "center_y_up", "center_z")
_MATRIX_HEADER = "gesture-state-matrix v1"


@dataclass(frozen=True)
class SegmentationConfig:
    """Chest-line trigger parameters, in normalized image units / seconds.

    chest_line is a y-down threshold: the hand is "raised" when its
    center y is at or above (<=) this line. The end rule and trigger run
    length are artifact configuration, not tuned values.
    """

    chest_line: float = 0.55
    trigger_frames: int = 2
    end_hold: float = 0.6

    def __post_init__(self):
        if self.trigger_frames < 1:
            raise MalformedInput("trigger_frames must be >= 1")
        if self.end_hold < 0:
            raise MalformedInput("end_hold must be >= 0")


@dataclass(frozen=True)
class GestureWindow:
    start_time: float
    end_time: float
    frames: tuple[HandLandmarkFrame, ...]

    def __post_init__(self):
        if not self.start_time < self.end_time:
            raise MalformedInput("window start must precede end")
        for f in self.frames:
            if not (self.start_time <= f.timestamp <= self.end_time):
                raise MalformedInput("window frame outside [start, end]")

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


def detect_gesture_window(
    stream: LandmarkStream, cfg: SegmentationConfig | None = None
) -> list[GestureWindow]:
    """Non-overlapping gesture windows, in time order.

    Only right-hand streams are segmented; left hands parse fine but are
    rejected here.
    """
    cfg = cfg or SegmentationConfig()
    if not stream.frames:
        raise EmptyStream("cannot segment an empty stream")
    for f in stream.frames:
        if f.handedness != Handedness.RIGHT:
            raise LeftHandUnsupported("encoder handles right-hand streams only")

    above = [hand_center(f).y <= cfg.chest_line for f in stream.frames]
    windows: list[GestureWindow] = []

    run_start: int | None = None  # first frame of the current above-run (pre-trigger)
    open_start: int | None = None  # first frame of the open window
    last_above: int | None = None
    below_since: float | None = None

    def close_window(start_idx: int, end_idx: int) -> None:
        start_f = stream.frames[start_idx]
        end_f = stream.frames[end_idx]
        if end_f.timestamp <= start_f.timestamp:
            logger.debug("dropping zero-duration window at t=%s", start_f.timestamp)
            return
        windows.append(
            GestureWindow(
                start_time=start_f.timestamp,
                end_time=end_f.timestamp,
                frames=tuple(stream.frames[start_idx : end_idx + 1]),
            )
        )

    for i, frame in enumerate(stream.frames):
        if open_start is None:
            if above[i]:
                if run_start is None:
                    run_start = i
                if i - run_start + 1 >= cfg.trigger_frames:
                    open_start = run_start
                    last_above = i
                    below_since = None
            else:
                run_start = None
        else:
            if above[i]:
                last_above = i
                below_since = None
            else:
                if below_since is None:
                    below_since = frame.timestamp
                if frame.timestamp - below_since >= cfg.end_hold:
                    close_window(open_start, last_above)
                    open_start = None
                    run_start = None
                    below_since = None

    if open_start is not None:
        close_window(open_start, last_above)
    return windows


def sample_window(window: GestureWindow) -> list[HandLandmarkFrame]:
    """Frames nearest to the 0.2 s sample instants; ties go to the
    earlier frame. Produces floor(duration / 0.2) + 1 samples."""
    times = [f.timestamp for f in window.frames]
    k_max = int(math.floor(window.duration / SAMPLE_INTERVAL + _TIME_EPS))
    samples = []
    for k in range(k_max + 1):
        target = window.start_time + SAMPLE_INTERVAL * k
        best_idx = 0
        best_err = abs(times[0] - target)
        for idx in range(1, len(times)):
            err = abs(times[idx] - target)
            if err < best_err - _TIME_EPS:
                best_err = err
                best_idx = idx
        samples.append(window.frames[best_idx])
    return samples


@dataclass(eq=False)
class GestureStateMatrix:
    """channel1: 19 x T pose states; channel2: 2 x T (3 x T with depth)
    hand-center trajectory with the vertical row re-expressed up-positive
    (0 bottom .. 1 top). hand_width gauges movement magnitude."""

    channel1: np.ndarray
    channel2: np.ndarray
    hand_width: float
    sample_interval: float = SAMPLE_INTERVAL

    @property
    def T(self) -> int:
        return int(self.channel1.shape[1])

    @property
    def has_depth(self) -> bool:
        return self.channel2.shape[0] == 3

    def __eq__(self, other) -> bool:
        if not isinstance(other, GestureStateMatrix):
            return NotImplemented
        return (
            np.array_equal(self.channel1, other.channel1)
            and np.array_equal(self.channel2, other.channel2)
            and self.hand_width == other.hand_width
            and self.sample_interval == other.sample_interval
        )


def validate_state_matrix(m: GestureStateMatrix) -> None:
    """Raise AssertionError unless the matrix satisfies its invariants."""
    assert m.channel1.ndim == 2 and m.channel1.shape[0] == 19
    assert m.channel2.ndim == 2 and m.channel2.shape[0] in (2, 3)
    assert m.channel1.shape[1] == m.channel2.shape[1] >= 1, "channels must share T >= 1"
    for j in range(m.T):
        validate_pose_vector(m.channel1[:, j])
    for row in range(2):
        assert np.all(m.channel2[row] >= -0.5) and np.all(m.channel2[row] <= 1.5)
    assert m.hand_width > 0
    assert m.sample_interval > 0


def build_state_matrix(
    samples: list[HandLandmarkFrame], th: RuleThresholds
) -> GestureStateMatrix:
    """Assemble the matrix from sampled frames (>= 1 required)."""
    if not samples:
        raise EmptyStream("cannot build a matrix from zero samples")
    channel1 = np.stack([encode_pose_vector(f, th) for f in samples], axis=1)
    centers = [hand_center(f) for f in samples]
    with_depth = all(c.has_depth for c in centers)
    rows = [
        [c.x for c in centers],
        [1.0 - c.y for c in centers],  # up-positive vertical
    ]
    if with_depth:
        rows.append([c.z for c in centers])
    channel2 = np.array(rows, dtype=float)
    width = float(np.mean([c.hand_width for c in centers]))
    return GestureStateMatrix(channel1=channel1, channel2=channel2, hand_width=width)


def serialize_matrix(m: GestureStateMatrix) -> str:
    """Deterministic text rendering for prompt embedding.

    Labeled integer rows for channel1, 3-decimal reals for channel2,
    and a header carrying T, the sample interval, and the hand width.
    """
    lines = [
        _MATRIX_HEADER,
        f"T={m.T} interval={m.sample_interval:.3f} hand_width={m.hand_width:.3f}",
    ]
    label_w = max(len(s) for s in POSE_ROW_LABELS + _CHANNEL2_LABELS)
    for i, label in enumerate(POSE_ROW_LABELS):
        cells = " ".join(f"{int(v):>2d}" for v in m.channel1[i])
        lines.append(f"{label:<{label_w}} {cells}")
    for r in range(m.channel2.shape[0]):
        cells = " ".join(f"{v:.3f}" for v in m.channel2[r])
        lines.append(f"{_CHANNEL2_LABELS[r]:<{label_w}} {cells}")
    return "\n".join(lines) + "\n"


def parse_matrix_text(text: str) -> GestureStateMatrix:
    """Parse the serialize_matrix rendering back into a matrix."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _MATRIX_HEADER:
        raise MalformedInput("missing gesture-state-matrix header")
    header = dict(part.split("=", 1) for part in lines[1].split())
    try:
        t_count = int(header["T"])
        interval = float(header["interval"])
        width = float(header["hand_width"])
    except (KeyError, ValueError) as exc:
        raise MalformedInput(f"bad matrix header: {lines[1]!r}") from exc

    rows: dict[str, list[float]] = {}
    for line in lines[2:]:
        parts = line.split()
        label, cells = parts[0], parts[1:]
        if len(cells) != t_count:
            raise MalformedInput(f"row {label} has {len(cells)} cells, expected {t_count}")
        rows[label] = [float(c) for c in cells]
    missing = [lab for lab in POSE_ROW_LABELS if lab not in rows]
    if missing or "center_x" not in rows or "center_y_up" not in rows:
        raise MalformedInput(f"matrix text missing rows: {missing}")

    channel1 = np.array([rows[lab] for lab in POSE_ROW_LABELS], dtype=int)
    ch2_labels = [lab for lab in _CHANNEL2_LABELS if lab in rows]
    channel2 = np.array([rows[lab] for lab in ch2_labels], dtype=float)
    return GestureStateMatrix(
        channel1=channel1, channel2=channel2, hand_width=width, sample_interval=interval
    )


def serialize_movement(m: GestureStateMatrix, start: int, end: int) -> str:
    """Channel-2 columns for span [start, end] inclusive, in the same
    text style, for the movement-description prompt."""
    if not (0 <= start <= end < m.T):
        raise MalformedInput(f"bad movement span [{start}, {end}] for T={m.T}")
    lines = [
        f"span={start}..{end} interval={m.sample_interval:.3f} hand_width={m.hand_width:.3f}",
    ]
    for r in range(m.channel2.shape[0]):
        cells = " ".join(f"{v:.3f}" for v in m.channel2[r, start : end + 1])
        lines.append(f"{_CHANNEL2_LABELS[r]} {cells}")
    return "\n".join(lines) + "\n"


def matrix_to_json(m: GestureStateMatrix) -> str:
    """Full-precision JSON export; exact round-trip with matrix_from_json."""
    doc = {
        "channel1": m.channel1.tolist(),
        "channel2": m.channel2.tolist(),
        "hand_width": m.hand_width,
        "T": m.T,
        "interval": m.sample_interval,
    }
    return json.dumps(doc, ensure_ascii=False) + "\n"


def matrix_from_json(text: str | bytes) -> GestureStateMatrix:
    try:
        doc = json.loads(text)
        m = GestureStateMatrix(
            channel1=np.array(doc["channel1"], dtype=int),
            channel2=np.array(doc["channel2"], dtype=float),
            hand_width=float(doc["hand_width"]),
            sample_interval=float(doc["interval"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"bad matrix JSON: {exc}") from exc
    if m.channel1.ndim != 2 or m.channel1.shape[0] != 19:
        raise MalformedInput("channel1 must be 19 x T")
    if m.channel2.ndim != 2 or m.channel2.shape[1] != m.channel1.shape[1]:
        raise MalformedInput("channel2 must share T with channel1")
    return m


def encode_stream(
    stream: LandmarkStream,
    th: RuleThresholds | None = None,
    cfg: SegmentationConfig | None = None,
) -> list[GestureStateMatrix]:
    """detect -> sample -> build for every window in the stream."""
    th = th or RuleThresholds()
    return [
        build_state_matrix(sample_window(w), th)
        for w in detect_gesture_window(stream, cfg)
    ]
