"""Parsing, validation, and indexing of 21-point hand-landmark streams.

Coordinate convention (fixed artifact-wide): x grows rightward, y grows
downward, z is relative depth with more negative values closer to the
camera. Streams recorded in other conventions must be normalized by the
producer before they reach this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    BadLandmarkCount,
    MalformedInput,
    NonMonotonicTimestamps,
    UnknownLandmarkName,
)

LANDMARK_NAMES = (
    "WRIST",
    "THUMB_CMC", "THUMB_MCP", "THUMB_IP", "THUMB_TIP",
    "INDEX_FINGER_MCP", "INDEX_FINGER_PIP", "INDEX_FINGER_DIP", "INDEX_FINGER_TIP",
    "MIDDLE_FINGER_MCP", "MIDDLE_FINGER_PIP", "MIDDLE_FINGER_DIP", "MIDDLE_FINGER_TIP",
    "RING_FINGER_MCP", "RING_FINGER_PIP", "RING_FINGER_DIP", "RING_FINGER_TIP",
    "PINKY_MCP", "PINKY_PIP", "PINKY_DIP", "PINKY_TIP",
)

_NAME_TO_INDEX = {name: i for i, name in enumerate(LANDMARK_NAMES)}

FINGERS = ("thumb", "index", "middle", "ring", "pinky")

# Joint indices per finger, proximal to tip. The thumb row is
# (CMC, MCP, IP, TIP); other fingers are (MCP, PIP, DIP, TIP).
FINGER_JOINTS = {
    "thumb": (1, 2, 3, 4),
    "index": (5, 6, 7, 8),
    "middle": (9, 10, 11, 12),
    "ring": (13, 14, 15, 16),
    "pinky": (17, 18, 19, 20),
}

# Widest x/y excursion tolerated for off-frame landmarks.
_COORD_MIN = -0.5
_COORD_MAX = 1.5


def landmark_index(name: str) -> int:
    """Index 0..20 of a canonical landmark name."""
    try:
        return _NAME_TO_INDEX[name]
    except KeyError:
        raise UnknownLandmarkName(f"unknown landmark name: {name!r}") from None


class Handedness(str, Enum):
    RIGHT = "right"
    LEFT = "left"


class SourceView(str, Enum):
    FIRST_PERSON = "first_person"
    THIRD_PERSON = "third_person"


@dataclass(frozen=True)
class Landmark:
    """One normalized-image landmark; x/y may slightly leave [0, 1]."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise MalformedInput(f"non-finite landmark coordinate: {v!r}")
        for v in (self.x, self.y):
            if not (_COORD_MIN <= v <= _COORD_MAX):
                raise MalformedInput(
                    f"landmark coordinate {v} outside [{_COORD_MIN}, {_COORD_MAX}]"
                )


@dataclass(frozen=True)
class HandLandmarkFrame:
    """One timestamped set of 21 landmarks for one hand.

    has_depth records whether the source stream carried a z component;
    2D streams get z=0 substituted and has_depth=False.
    """

    timestamp: float
    handedness: Handedness
    landmarks: tuple[Landmark, ...]
    has_depth: bool = True

    def __post_init__(self):
        if len(self.landmarks) != 21:
            raise BadLandmarkCount(
                f"frame at t={self.timestamp} has {len(self.landmarks)} landmarks, expected 21"
            )
        if not (math.isfinite(self.timestamp) and self.timestamp >= 0):
            raise MalformedInput(f"bad frame timestamp: {self.timestamp!r}")

    def as_array(self) -> np.ndarray:
        """Landmarks as a (21, 3) float array."""
        return np.array([(p.x, p.y, p.z) for p in self.landmarks], dtype=float)

    def point(self, index: int) -> np.ndarray:
        return np.array(
            (self.landmarks[index].x, self.landmarks[index].y, self.landmarks[index].z)
        )


@dataclass(frozen=True)
class LandmarkStream:
    """Ordered frames from one capture; immutable after parse."""

    frames: tuple[HandLandmarkFrame, ...]
    source_view: SourceView = SourceView.THIRD_PERSON

    def __post_init__(self):
        times = [f.timestamp for f in self.frames]
        for earlier, later in zip(times, times[1:]):
            if later <= earlier:
                raise NonMonotonicTimestamps(
                    f"timestamps not strictly increasing: {earlier} -> {later}"
                )

    @property
    def has_depth(self) -> bool:
        return all(f.has_depth for f in self.frames)


def parse_landmark_stream(raw: bytes | str) -> LandmarkStream:
    """Parse the documented JSON stream format into a validated stream.

    Schema: {"source_view": "...", "handedness": "right"|"left",
    "frames": [{"t": seconds, "lm": [[x, y, z] or [x, y]] * 21}, ...]}.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="strict")
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedInput("stream document must be a JSON object")

    try:
        handedness = Handedness(doc.get("handedness", "right"))
        source_view = SourceView(doc.get("source_view", "third_person"))
    except ValueError as exc:
        raise MalformedInput(str(exc)) from exc

    raw_frames = doc.get("frames")
    if not isinstance(raw_frames, list):
        raise MalformedInput('missing or non-list "frames"')

    frames = []
    for entry in raw_frames:
        if not isinstance(entry, dict) or "t" not in entry or "lm" not in entry:
            raise MalformedInput('each frame needs "t" and "lm"')
        lm = entry["lm"]
        if not isinstance(lm, list) or len(lm) != 21:
            raise BadLandmarkCount(
                f"frame at t={entry['t']} has {len(lm) if isinstance(lm, list) else '?'} landmarks"
            )
        has_depth = True
        points = []
        for coords in lm:
            if not isinstance(coords, list) or len(coords) not in (2, 3):
                raise MalformedInput(f"landmark entry must be [x,y] or [x,y,z]: {coords!r}")
            if len(coords) == 2:
                has_depth = False
                coords = [coords[0], coords[1], 0.0]
            try:
                points.append(Landmark(float(coords[0]), float(coords[1]), float(coords[2])))
            except (TypeError, ValueError) as exc:
                raise MalformedInput(f"bad landmark coordinates: {coords!r}") from exc
        try:
            t = float(entry["t"])
        except (TypeError, ValueError) as exc:
            raise MalformedInput(f"bad timestamp: {entry['t']!r}") from exc
        frames.append(
            HandLandmarkFrame(
                timestamp=t,
                handedness=handedness,
                landmarks=tuple(points),
                has_depth=has_depth,
            )
        )

    return LandmarkStream(frames=tuple(frames), source_view=source_view)


def serialize_landmark_stream(stream: LandmarkStream) -> bytes:
    """Inverse of parse_landmark_stream; exact value round-trip.

    Floats are emitted at full repr precision so parse(serialize(s)) == s.
    Streams without depth serialize landmarks as [x, y].
    """
    handedness = stream.frames[0].handedness.value if stream.frames else "right"
    doc = {
        "source_view": stream.source_view.value,
        "handedness": handedness,
        "frames": [
            {
                "t": f.timestamp,
                "lm": [
                    [p.x, p.y, p.z] if f.has_depth else [p.x, p.y]
                    for p in f.landmarks
                ],
            }
            for f in stream.frames
        ],
    }
    return json.dumps(doc, ensure_ascii=False).encode("utf-8")
