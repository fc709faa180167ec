"""Three-way correctness assessment, asymmetric loss, and grid search.

Tuning works on scalar measurements (curl angles, joint distances,
reference angles) extracted once per labeled sample, so sweeping a grid
never re-runs the geometry. Rules with a (low, high) threshold pair are
swept over all low < high cells; single-threshold rules (thumb direction,
palm orientation) carry a per-sample candidate state and sweep only the
angle threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Hashable, Sequence

import numpy as np

from .errors import (
    AmbiguousLabelPresent,
    EmptyDataset,
    EmptyGrid,
    MalformedInput,
    StateSpaceMismatch,
)
from .landmarks import HandLandmarkFrame
from .rules import (
    PalmOrientation,
    contact_distance,
    finger_curl_deg,
    palm_orientation_measurement,
    proximity_distance,
    thumb_direction_measurement,
)


class Assessment(Enum):
    CORRECT = "correct"
    ERROR = "error"
    UNSURE = "unsure"


@dataclass(frozen=True)
class LossWeights:
    """Per-outcome losses. The unsure loss sits strictly between correct
    and error so the optimum neither abstains everywhere nor never.

    unsure_loss == error_loss is tolerated (degenerate weighting used to
    probe that boundary behaviour), but never exceeds it.
    """

    unsure_loss: float = 0.2
    error_loss: float = 1.0
    correct_loss: float = 0.0

    def __post_init__(self):
        if not (0 <= self.correct_loss < self.unsure_loss <= self.error_loss):
            raise MalformedInput(
                "loss weights must satisfy 0 <= correct < unsure <= error"
            )


@dataclass(frozen=True)
class StateSpace:
    """Discrete states of one rule plus its designated unsure marker."""

    states: frozenset
    unsure: Hashable

    def __post_init__(self):
        if self.unsure not in self.states:
            raise MalformedInput("unsure marker must be a member of the state space")


THREE_WAY_SPACE = StateSpace(states=frozenset({-1, 0, 1}), unsure=0)
PALM_SPACE = StateSpace(
    states=frozenset(PalmOrientation), unsure=PalmOrientation.UNKNOWN
)

RULE_STATE_SPACES = {
    "flexion_thumb": THREE_WAY_SPACE,
    "flexion_finger": THREE_WAY_SPACE,
    "proximity": THREE_WAY_SPACE,
    "contact": THREE_WAY_SPACE,
    "thumb_direction": THREE_WAY_SPACE,
    "palm_orientation": PALM_SPACE,
}

# Rules tuned over a (low, high) pair; the rest sweep one angle threshold.
PAIRED_RULES = ("flexion_thumb", "flexion_finger", "proximity", "contact")


@dataclass(frozen=True)
class GroundTruthLabel:
    """Acceptable states for one rule on one sample; ambiguous labels
    (size >= 2) are kept for assessment but excluded from tuning."""

    acceptable_states: frozenset

    def __post_init__(self):
        if not self.acceptable_states:
            raise MalformedInput("label needs at least one acceptable state")

    @property
    def is_ambiguous(self) -> bool:
        return len(self.acceptable_states) >= 2


def assess(prediction, label: GroundTruthLabel, space: StateSpace) -> Assessment:
    """Unsure if the rule abstained, else correct iff the label accepts."""
    if prediction not in space.states:
        raise StateSpaceMismatch(f"prediction {prediction!r} outside state space")
    if not label.acceptable_states <= space.states:
        raise StateSpaceMismatch(f"label {label} outside state space")
    if prediction == space.unsure:
        return Assessment.UNSURE
    if prediction in label.acceptable_states:
        return Assessment.CORRECT
    return Assessment.ERROR


def average_loss(assessments: Sequence[Assessment], w: LossWeights) -> float:
    if not assessments:
        raise EmptyDataset("average_loss over zero assessments")
    per = {
        Assessment.CORRECT: w.correct_loss,
        Assessment.ERROR: w.error_loss,
        Assessment.UNSURE: w.unsure_loss,
    }
    return float(np.mean([per[a] for a in assessments]))


def assessment_rates(assessments: Sequence[Assessment]) -> dict[str, float]:
    """error / unsure / correct fractions, as in the tuning report."""
    if not assessments:
        raise EmptyDataset("rates over zero assessments")
    n = len(assessments)
    return {
        "error": sum(a == Assessment.ERROR for a in assessments) / n,
        "unsure": sum(a == Assessment.UNSURE for a in assessments) / n,
        "correct": sum(a == Assessment.CORRECT for a in assessments) / n,
    }


@dataclass(frozen=True)
class MeasuredSample:
    """One labeled scalar measurement. candidate_state is the direction /
    orientation the rule would report when decided (single-threshold
    rules only)."""

    measurement: float
    label: GroundTruthLabel
    candidate_state: Hashable = None


@dataclass(frozen=True)
class GridSpec:
    """Candidate threshold values. high_values empty means the rule has a
    single threshold. Paired cells are every (low, high) with low < high;
    disjoint low/high ranges therefore use the full product."""

    low_values: tuple[float, ...]
    high_values: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.low_values:
            raise EmptyGrid("grid has no candidate values")
        if self.high_values and not any(
            lo < hi for lo in self.low_values for hi in self.high_values
        ):
            raise EmptyGrid("no (low, high) cell satisfies low < high")

    @property
    def paired(self) -> bool:
        return bool(self.high_values)

    def cells(self) -> list[tuple[float, ...]]:
        """Cells in lexicographic order (the tie-break order)."""
        if not self.paired:
            return [(v,) for v in sorted(self.low_values)]
        return [
            (lo, hi)
            for lo in sorted(self.low_values)
            for hi in sorted(self.high_values)
            if lo < hi
        ]

    @classmethod
    def from_ranges(
        cls,
        low: tuple[float, float, float],
        high: tuple[float, float, float] | None = None,
    ) -> "GridSpec":
        """Build from inclusive (start, stop, step) ranges."""
        return cls(
            low_values=_expand_range(*low),
            high_values=_expand_range(*high) if high else (),
        )


def _expand_range(start: float, stop: float, step: float) -> tuple[float, ...]:
    if step <= 0 or stop < start:
        raise MalformedInput(f"bad range ({start}, {stop}, {step})")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + k * step, 12) for k in range(n))


def default_grid(rule_id: str) -> GridSpec:
    """Defaults that bracket the shipped tuned values: degrees step 1 for
    flexion, 0.001 for distances, 1 degree for direction/orientation angles."""
    if rule_id in ("flexion_thumb", "flexion_finger"):
        return GridSpec.from_ranges((0, 180, 1), (0, 180, 1))
    if rule_id in ("proximity", "contact"):
        return GridSpec.from_ranges((0.0, 0.2, 0.001), (0.0, 0.2, 0.001))
    if rule_id in ("thumb_direction", "palm_orientation"):
        return GridSpec.from_ranges((0, 90, 1))
    raise MalformedInput(f"unknown rule id: {rule_id!r}")


def _tuning_arrays(dataset: Sequence[MeasuredSample], paired: bool):
    if not dataset:
        raise EmptyDataset("grid search over zero samples")
    for s in dataset:
        if s.label.is_ambiguous:
            raise AmbiguousLabelPresent(
                "ambiguous labels must be filtered before tuning"
            )
    m = np.array([s.measurement for s in dataset], dtype=float)
    if paired:
        pos_ok = np.array([1 in s.label.acceptable_states for s in dataset])
        neg_ok = np.array([-1 in s.label.acceptable_states for s in dataset])
        return m, pos_ok, neg_ok
    cand_ok = np.array(
        [s.candidate_state in s.label.acceptable_states for s in dataset]
    )
    return m, cand_ok


def _paired_cell_loss(m, pos_ok, neg_ok, low, high, w: LossWeights) -> float:
    verdict = np.where(m <= low, 1, np.where(m >= high, -1, 0))
    correct = ((verdict == 1) & pos_ok) | ((verdict == -1) & neg_ok)
    loss = np.where(
        verdict == 0, w.unsure_loss, np.where(correct, w.correct_loss, w.error_loss)
    )
    return float(loss.mean())


def _single_cell_loss(m, cand_ok, threshold, w: LossWeights) -> float:
    decided = m <= threshold
    loss = np.where(
        ~decided, w.unsure_loss, np.where(cand_ok, w.correct_loss, w.error_loss)
    )
    return float(loss.mean())


def grid_search(
    dataset: Sequence[MeasuredSample], grid: GridSpec, w: LossWeights | None = None
) -> tuple[tuple[float, ...], float]:
    """Exhaustive sweep; returns (best cell, minimal average loss).

    Ties go to the lexicographically smallest cell. The dataset must be
    pre-filtered of ambiguous labels (asserted here).
    """
    w = w or LossWeights()
    cells = grid.cells()
    if not cells:
        raise EmptyGrid("grid expands to zero cells")
    arrays = _tuning_arrays(dataset, grid.paired)
    best_cell: tuple[float, ...] | None = None
    best_loss = np.inf
    for cell in cells:
        if grid.paired:
            loss = _paired_cell_loss(*arrays, cell[0], cell[1], w)
        else:
            loss = _single_cell_loss(*arrays, cell[0], w)
        if loss < best_loss:
            best_loss = loss
            best_cell = cell
    return best_cell, float(best_loss)


def classify_paired(measurement: float, low: float, high: float) -> int:
    """Three-way verdict as an int (+1 / 0 / -1)."""
    if measurement <= low:
        return 1
    if measurement >= high:
        return -1
    return 0


def classify_single(measurement: float, candidate_state, threshold: float, unsure):
    return candidate_state if measurement <= threshold else unsure


def predictions_for_cell(
    dataset: Sequence[MeasuredSample], grid_paired: bool, cell: tuple[float, ...], unsure=0
) -> list:
    """Verdicts of one grid cell over the dataset (report generation)."""
    if grid_paired:
        return [classify_paired(s.measurement, cell[0], cell[1]) for s in dataset]
    return [
        classify_single(s.measurement, s.candidate_state, cell[0], unsure)
        for s in dataset
    ]


def rule_measurement(
    frame: HandLandmarkFrame, rule_id: str, target: str | None, distance_mode: str = "xy"
) -> tuple[float, Hashable]:
    """Scalar measurement (and candidate state, when applicable) that the
    named rule derives from a frame. target selects the finger or pair
    for flexion/proximity/contact."""
    if rule_id == "flexion_thumb":
        return finger_curl_deg(frame, "thumb"), None
    if rule_id == "flexion_finger":
        if target not in ("index", "middle", "ring", "pinky"):
            raise MalformedInput(f"flexion_finger needs a finger target, got {target!r}")
        return finger_curl_deg(frame, target), None
    if rule_id == "proximity":
        return proximity_distance(frame, target, distance_mode), None
    if rule_id == "contact":
        return contact_distance(frame, target, distance_mode), None
    if rule_id == "thumb_direction":
        angle, direction = thumb_direction_measurement(frame)
        return angle, int(direction)
    if rule_id == "palm_orientation":
        angle, orientation = palm_orientation_measurement(frame)
        return angle, orientation
    raise MalformedInput(f"unknown rule id: {rule_id!r}")
