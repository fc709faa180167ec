#!/usr/bin/env python3
"""Threshold-recovery experiment on synthetic labeled hands.

Plants a known flexion boundary, renders labeled frames on both sides of
it, and checks that the grid-search tuner recovers the planted
thresholds from the frames alone. Exercises the same `tune` CLI a user
would run on a real labeled dataset.

Usage: python scripts/tune_synthetic.py [--out tune_run] [--samples 200]
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys
from pathlib import Path

from gesturelink.cli import main as cli

FLAT_HAND = [
    (0.50, 0.90, 0.0),
    (0.38, 0.82, 0.0), (0.34, 0.76, 0.0), (0.31, 0.71, 0.0), (0.28, 0.66, 0.0),
    (0.42, 0.72, 0.0), (0.42, 0.62, 0.0), (0.42, 0.56, 0.0), (0.42, 0.50, 0.0),
    (0.50, 0.70, 0.0), (0.50, 0.60, 0.0), (0.50, 0.53, 0.0), (0.50, 0.46, 0.0),
    (0.58, 0.72, 0.0), (0.58, 0.62, 0.0), (0.58, 0.56, 0.0), (0.58, 0.50, 0.0),
    (0.66, 0.74, 0.0), (0.66, 0.66, 0.0), (0.66, 0.61, 0.0), (0.66, 0.56, 0.0),
]

PLANTED_LOW, PLANTED_HIGH = 30.0, 35.0


def curl_frame(theta_deg: float):
    """Index finger bent theta degrees at the PIP joint, straight DIP."""
    rad = math.radians(theta_deg)
    mcp, pip_ = (0.42, 0.80, 0.0), (0.42, 0.70, 0.0)
    step = (0.1 * math.sin(rad), -0.1 * math.cos(rad), 0.0)
    dip = (pip_[0] + step[0], pip_[1] + step[1], 0.0)
    tip = (dip[0] + step[0], dip[1] + step[1], 0.0)
    points = list(FLAT_HAND)
    points[5], points[6], points[7], points[8] = mcp, pip_, dip, tip
    return {"t": 0.0, "lm": [list(p) for p in points]}


def build_dataset(out: Path, samples: int, seed: int) -> Path:
    rng = random.Random(seed)
    lines = []
    # Anchors just inside the planted boundaries keep the zero-loss
    # region one grid cell wide.
    curls = [(PLANTED_LOW - 0.1, [1]), (PLANTED_HIGH + 0.1, [-1])]
    for _ in range(samples // 2 - 1):
        curls.append((rng.uniform(2.0, PLANTED_LOW - 0.2), [1]))
        curls.append((rng.uniform(PLANTED_HIGH + 0.2, 170.0), [-1]))
    for theta, states in curls:
        lines.append(json.dumps({
            "rule": "flexion_finger",
            "target": "index",
            "acceptable_states": states,
            "frame": curl_frame(theta),
        }))
    path = out / "labels.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def run(out: Path, samples: int, seed: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(out, samples, seed)
    grid = out / "grid.json"
    grid.write_text(json.dumps(
        {"flexion_finger": {"low": [0, 90, 5], "high": [5, 180, 5]}}
    ))
    print(f"planted thresholds: ({PLANTED_LOW}, {PLANTED_HIGH})")
    code = cli([
        "tune", str(dataset), "--grid", str(grid),
        "--out", str(out / "tuned.json"), "--report", str(out / "report.json"),
    ])
    if code != 0:
        return code
    tuned = json.loads((out / "tuned.json").read_text())
    recovered = tuned["flexion_finger"]
    print(f"recovered thresholds: {tuple(recovered)}")
    ok = abs(recovered[0] - PLANTED_LOW) <= 5 and abs(recovered[1] - PLANTED_HIGH) <= 5
    print("within one grid step" if ok else "RECOVERY FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="tune_run", help="output directory")
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    sys.exit(run(Path(args.out), args.samples, args.seed))
