"""Six tunable geometric rules over one hand frame, with three-way outputs.

Every calculator is a pure function of (frame, thresholds). Verdicts are
three-way: a positive state, a negative state, or unsure when the
measurement falls strictly between the two thresholds. Degenerate
geometry (coincident joints, vanishing palm normal) yields unsure or
unknown instead of raising, so borderline frames never poison a stream.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

from .errors import DegenerateGeometry, MalformedInput
from .geometry import angle_between_deg, cross, point_polyline_distance
from .landmarks import FINGER_JOINTS, HandLandmarkFrame, Handedness, landmark_index

logger = logging.getLogger(__name__)


class ThreeWay(IntEnum):
    """Signed verdict. The positive/negative reading depends on the rule:
    flexion +1 straight / -1 bent; proximity +1 pressed together / -1 apart;
    contact +1 touching / -1 not touching."""

    POSITIVE = 1
    UNSURE = 0
    NEGATIVE = -1


class ThumbDirection(IntEnum):
    UP = 1
    UNSURE = 0
    DOWN = -1


class PalmOrientation(Enum):
    LEFT = "left"
    RIGHT = "right"
    DOWN = "down"
    UP = "up"
    INWARD = "inward"
    OUTWARD = "outward"
    UNKNOWN = "unknown"


# One-hot order of pose-vector rows 14-19.
PALM_ONE_HOT_ORDER = (
    PalmOrientation.LEFT,
    PalmOrientation.RIGHT,
    PalmOrientation.DOWN,
    PalmOrientation.UP,
    PalmOrientation.INWARD,
    PalmOrientation.OUTWARD,
)

PROXIMITY_PAIRS = ("index_middle", "middle_ring", "ring_pinky")
CONTACT_FINGERS = ("index", "middle", "ring", "pinky")

# y grows downward in the image, so "up" is -y; "outward" is toward the
# camera, -z. Scan order decides ties: first reference reached at the
# minimal angle wins.
_UP = np.array([0.0, -1.0, 0.0])
_DOWN = np.array([0.0, 1.0, 0.0])
_THUMB_REFERENCES = ((ThumbDirection.DOWN, _DOWN), (ThumbDirection.UP, _UP))
_PALM_REFERENCES = (
    (PalmOrientation.RIGHT, np.array([1.0, 0.0, 0.0])),
    (PalmOrientation.LEFT, np.array([-1.0, 0.0, 0.0])),
    (PalmOrientation.DOWN, np.array([0.0, 1.0, 0.0])),
    (PalmOrientation.UP, np.array([0.0, -1.0, 0.0])),
    (PalmOrientation.OUTWARD, np.array([0.0, 0.0, -1.0])),
    (PalmOrientation.INWARD, np.array([0.0, 0.0, 1.0])),
)

_NORMAL_EPS = 1e-9


@dataclass(frozen=True)
class RuleThresholds:
    """All tunable rule parameters. Defaults are the tuned values that
    ship with the package (degrees for angles, normalized image units
    for distances).

    distance_mode selects whether proximity/contact distances use the
    image plane only ("xy") or include depth ("xyz"). Flexion, thumb
    direction, and palm orientation always use 3D geometry.
    """

    flexion_thumb: tuple[float, float] = (16.0, 38.0)
    flexion_finger: tuple[float, float] = (57.0, 74.0)
    proximity: tuple[float, float] = (0.024, 0.029)
    contact: tuple[float, float] = (0.046, 0.055)
    thumb_dir_angle_threshold: float = 40.0
    palm_angle_threshold: float = 41.0
    distance_mode: str = "xy"

    def __post_init__(self):
        for name in ("flexion_thumb", "flexion_finger", "proximity", "contact"):
            low, high = getattr(self, name)
            if not (0 < low < high):
                raise MalformedInput(f"{name} thresholds must satisfy 0 < low < high")
        for name in ("thumb_dir_angle_threshold", "palm_angle_threshold"):
            if getattr(self, name) <= 0:
                raise MalformedInput(f"{name} must be > 0")
        if self.distance_mode not in ("xy", "xyz"):
            raise MalformedInput(f"distance_mode must be 'xy' or 'xyz'")

    def to_json(self) -> str:
        doc = {
            "flexion_thumb": list(self.flexion_thumb),
            "flexion_finger": list(self.flexion_finger),
            "proximity": list(self.proximity),
            "contact": list(self.contact),
            "thumb_dir_angle_threshold": self.thumb_dir_angle_threshold,
            "palm_angle_threshold": self.palm_angle_threshold,
            "distance_mode": self.distance_mode,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str | bytes) -> "RuleThresholds":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"bad thresholds JSON: {exc}") from exc
        defaults = cls()
        kwargs = {}
        for name in ("flexion_thumb", "flexion_finger", "proximity", "contact"):
            if name in doc:
                pair = doc[name]
                if not (isinstance(pair, list) and len(pair) == 2):
                    raise MalformedInput(f"{name} must be a [low, high] pair")
                kwargs[name] = (float(pair[0]), float(pair[1]))
        for name in ("thumb_dir_angle_threshold", "palm_angle_threshold"):
            if name in doc:
                kwargs[name] = float(doc[name])
        if "distance_mode" in doc:
            kwargs["distance_mode"] = str(doc["distance_mode"])
        return replace(defaults, **kwargs)


@dataclass(frozen=True)
class HandCenter:
    """Geometric hand center plus the per-frame hand width
    (image-plane distance from index MCP to pinky MCP)."""

    x: float
    y: float
    z: float
    hand_width: float
    has_depth: bool = True


def three_way_verdict(measurement: float, low: float, high: float) -> ThreeWay:
    """Shared comparison: <= low positive, >= high negative, else unsure.

    Boundary values resolve away from unsure, so the unsure band is open.
    """
    if measurement <= low:
        return ThreeWay.POSITIVE
    if measurement >= high:
        return ThreeWay.NEGATIVE
    return ThreeWay.UNSURE


def _joint_points(frame: HandLandmarkFrame, finger: str) -> list[np.ndarray]:
    return [frame.point(i) for i in FINGER_JOINTS[finger]]


def finger_curl_deg(frame: HandLandmarkFrame, finger: str) -> float:
    """Total bending angle of the finger in degrees (3D).

    Thumb: the IP joint angle (MCP->IP vs IP->TIP). Other fingers: sum of
    the PIP and DIP joint angles. Raises DegenerateGeometry on a
    zero-length bone.
    """
    if finger == "thumb":
        _, mcp, ip, tip = _joint_points(frame, "thumb")
        return angle_between_deg(ip - mcp, tip - ip)
    mcp, pip_, dip, tip = _joint_points(frame, finger)
    return angle_between_deg(pip_ - mcp, dip - pip_) + angle_between_deg(
        dip - pip_, tip - dip
    )


def flexion(frame: HandLandmarkFrame, finger: str, th: RuleThresholds) -> ThreeWay:
    """Straight (+1) / bent (-1) / unsure (0) state of one finger."""
    if finger not in FINGER_JOINTS:
        raise ValueError(f"unknown finger: {finger!r}")
    low, high = th.flexion_thumb if finger == "thumb" else th.flexion_finger
    try:
        curl = finger_curl_deg(frame, finger)
    except DegenerateGeometry:
        logger.warning("degenerate %s bone at t=%s; flexion unsure", finger, frame.timestamp)
        return ThreeWay.UNSURE
    return three_way_verdict(curl, low, high)


def _distal_points(frame: HandLandmarkFrame, finger: str, mode: str) -> list[np.ndarray]:
    """PIP, DIP, TIP of a non-thumb finger, projected per distance mode."""
    pts = _joint_points(frame, finger)[1:]
    if mode == "xy":
        return [p[:2] for p in pts]
    return pts


def proximity_distance(frame: HandLandmarkFrame, pair: str, mode: str = "xy") -> float:
    """Mean over joint levels (PIP, DIP, TIP) of the smaller distance from
    either finger's joint to the other finger's distal polyline."""
    if pair not in PROXIMITY_PAIRS:
        raise ValueError(f"unknown finger pair: {pair!r}")
    f1, f2 = pair.split("_")
    pts1 = _distal_points(frame, f1, mode)
    pts2 = _distal_points(frame, f2, mode)
    per_level = [
        min(point_polyline_distance(pts1[i], pts2), point_polyline_distance(pts2[i], pts1))
        for i in range(3)
    ]
    return float(np.mean(per_level))


def proximity(frame: HandLandmarkFrame, pair: str, th: RuleThresholds) -> ThreeWay:
    """Pressed together (+1) / apart (-1) / unsure (0) for adjacent fingers."""
    low, high = th.proximity
    d = proximity_distance(frame, pair, th.distance_mode)
    return three_way_verdict(d, low, high)


def contact_distance(frame: HandLandmarkFrame, finger: str, mode: str = "xy") -> float:
    """Distance between the thumb tip and the given finger's tip."""
    if finger not in CONTACT_FINGERS:
        raise ValueError(f"contact is defined against the thumb; got {finger!r}")
    thumb_tip = frame.point(landmark_index("THUMB_TIP"))
    finger_tip = frame.point(FINGER_JOINTS[finger][3])
    if mode == "xy":
        thumb_tip, finger_tip = thumb_tip[:2], finger_tip[:2]
    return float(np.linalg.norm(thumb_tip - finger_tip))


def contact(frame: HandLandmarkFrame, finger: str, th: RuleThresholds) -> ThreeWay:
    """Fingertip contact (+1) / no contact (-1) / unsure (0) with the thumb."""
    low, high = th.contact
    d = contact_distance(frame, finger, th.distance_mode)
    return three_way_verdict(d, low, high)


def thumb_direction_measurement(frame: HandLandmarkFrame) -> tuple[float, ThumbDirection]:
    """(angle to the closer of down/up, that direction) for the thumb
    MCP->TIP vector. Raises DegenerateGeometry if the vector vanishes."""
    mcp = frame.point(landmark_index("THUMB_MCP"))
    tip = frame.point(landmark_index("THUMB_TIP"))
    v = tip - mcp
    best_angle = math.inf
    best_dir = ThumbDirection.UNSURE
    for direction, ref in _THUMB_REFERENCES:
        angle = angle_between_deg(v, ref)
        if angle < best_angle:
            best_angle = angle
            best_dir = direction
    return best_angle, best_dir


def thumb_pointing(
    frame: HandLandmarkFrame, thumb_flexion: ThreeWay, th: RuleThresholds
) -> ThumbDirection:
    """Up (+1) / down (-1) / unsure (0). Only a straight thumb points."""
    if thumb_flexion != ThreeWay.POSITIVE:
        return ThumbDirection.UNSURE
    try:
        angle, direction = thumb_direction_measurement(frame)
    except DegenerateGeometry:
        logger.warning("degenerate thumb vector at t=%s; direction unsure", frame.timestamp)
        return ThumbDirection.UNSURE
    if angle <= th.thumb_dir_angle_threshold:
        return direction
    return ThumbDirection.UNSURE


def palm_normal(frame: HandLandmarkFrame) -> np.ndarray:
    """Palm-plane normal: v1 spans pinky MCP -> index MCP, v2 spans
    wrist -> middle MCP; right hands use v2 x v1, left hands v1 x v2."""
    v1 = frame.point(landmark_index("INDEX_FINGER_MCP")) - frame.point(
        landmark_index("PINKY_MCP")
    )
    v2 = frame.point(landmark_index("MIDDLE_FINGER_MCP")) - frame.point(
        landmark_index("WRIST")
    )
    if frame.handedness == Handedness.LEFT:
        return cross(v1, v2)
    return cross(v2, v1)


def palm_orientation_measurement(
    frame: HandLandmarkFrame,
) -> tuple[float, PalmOrientation]:
    """(angle to the closest reference, that reference) for the palm normal.

    Raises DegenerateGeometry when the normal (nearly) vanishes.
    """
    n = palm_normal(frame)
    if float(np.linalg.norm(n)) < _NORMAL_EPS:
        raise DegenerateGeometry("palm normal vanishes")
    best_angle = math.inf
    best_ref = PalmOrientation.UNKNOWN
    for orientation, ref in _PALM_REFERENCES:
        angle = angle_between_deg(n, ref)
        if angle < best_angle:
            best_angle = angle
            best_ref = orientation
    return best_angle, best_ref


def palm_orientation(frame: HandLandmarkFrame, th: RuleThresholds) -> PalmOrientation:
    """Facing direction of the palm, or UNKNOWN outside the angle threshold.

    Without depth data the normal degenerates to the +-z axis, so
    inward/outward verdicts are meaningless and reported as UNKNOWN.
    """
    try:
        angle, orientation = palm_orientation_measurement(frame)
    except DegenerateGeometry:
        logger.warning("degenerate palm geometry at t=%s; orientation unknown", frame.timestamp)
        return PalmOrientation.UNKNOWN
    if angle > th.palm_angle_threshold:
        return PalmOrientation.UNKNOWN
    if not frame.has_depth and orientation in (
        PalmOrientation.INWARD,
        PalmOrientation.OUTWARD,
    ):
        return PalmOrientation.UNKNOWN
    return orientation


def hand_center(frame: HandLandmarkFrame) -> HandCenter:
    """Component-wise mean of all 21 landmarks plus the hand width."""
    pts = frame.as_array()
    cx, cy, cz = pts.mean(axis=0)
    index_mcp = frame.point(landmark_index("INDEX_FINGER_MCP"))
    pinky_mcp = frame.point(landmark_index("PINKY_MCP"))
    width = float(np.linalg.norm(index_mcp[:2] - pinky_mcp[:2]))
    return HandCenter(
        x=float(cx), y=float(cy), z=float(cz), hand_width=width, has_depth=frame.has_depth
    )


# Row labels of the 19-entry pose vector, in storage order.
POSE_ROW_LABELS = (
    "flexion_thumb", "flexion_index", "flexion_middle", "flexion_ring", "flexion_pinky",
    "proximity_index_middle", "proximity_middle_ring", "proximity_ring_pinky",
    "contact_thumb_index", "contact_thumb_middle", "contact_thumb_ring", "contact_thumb_pinky",
    "thumb_direction",
    "palm_left", "palm_right", "palm_down", "palm_up", "palm_inward", "palm_outward",
)


def encode_pose_vector(frame: HandLandmarkFrame, th: RuleThresholds) -> np.ndarray:
    """19-entry integer pose vector for one frame.

    Rows 1-5 flexion (thumb..pinky), 6-8 proximity, 9-12 thumb contact
    (index..pinky), 13 thumb direction, 14-19 palm one-hot (all zero for
    UNKNOWN). Degenerate sub-results land as zeros.
    """
    vec = np.zeros(19, dtype=int)
    flex = {f: flexion(frame, f, th) for f in FINGER_JOINTS}
    for i, finger in enumerate(("thumb", "index", "middle", "ring", "pinky")):
        vec[i] = int(flex[finger])
    for i, pair in enumerate(PROXIMITY_PAIRS):
        vec[5 + i] = int(proximity(frame, pair, th))
    for i, finger in enumerate(CONTACT_FINGERS):
        vec[8 + i] = int(contact(frame, finger, th))
    vec[12] = int(thumb_pointing(frame, flex["thumb"], th))
    orientation = palm_orientation(frame, th)
    if orientation != PalmOrientation.UNKNOWN:
        vec[13 + PALM_ONE_HOT_ORDER.index(orientation)] = 1
    return vec


def validate_pose_vector(vec: np.ndarray) -> None:
    """Raise AssertionError unless vec satisfies the pose-vector invariants."""
    assert vec.shape == (19,), f"pose vector shape {vec.shape}"
    assert all(int(v) in (-1, 0, 1) for v in vec[:13]), "rows 1-13 out of range"
    palm = vec[13:]
    assert all(int(v) in (0, 1) for v in palm), "palm rows out of range"
    assert int(palm.sum()) <= 1, "palm rows must be one-hot or all zero"
