#!/usr/bin/env python3
"""End-to-end demo on synthetic data.

Generates a small smart-home dataset (landmark stream, context library,
scripted model fixtures, task manifest) and drives the CLI through
encode -> ground -> eval. Everything runs offline against the scripted
backend, so output is fully deterministic.

Usage: python scripts/run_demo.py [--out demo_run]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from gesturelink.cli import main as cli
from gesturelink.context import ContextLibrary, FunctionEntry, make_external_context, \
    make_function_list_context, make_gaze_context, make_history_context

# Flat open right hand facing the camera; translated along y to simulate
# raising it above the chest line.
FLAT_HAND = [
    (0.50, 0.90, 0.0),
    (0.38, 0.82, 0.0), (0.34, 0.76, 0.0), (0.31, 0.71, 0.0), (0.28, 0.66, 0.0),
    (0.42, 0.72, 0.0), (0.42, 0.62, 0.0), (0.42, 0.56, 0.0), (0.42, 0.50, 0.0),
    (0.50, 0.70, 0.0), (0.50, 0.60, 0.0), (0.50, 0.53, 0.0), (0.50, 0.46, 0.0),
    (0.58, 0.72, 0.0), (0.58, 0.62, 0.0), (0.58, 0.56, 0.0), (0.58, 0.50, 0.0),
    (0.66, 0.74, 0.0), (0.66, 0.66, 0.0), (0.66, 0.61, 0.0), (0.66, 0.56, 0.0),
]
FLAT_CENTER_Y = sum(p[1] for p in FLAT_HAND) / 21

DEVICES = {
    "Light": ((0.2, 0.4, 1.5), ["Power", "Brightness Control", "Mode Switch"]),
    "Smart Cabinet": ((1.0, 0.8, 2.0), ["Child Lock", "Temperature Control", "Humidity Control"]),
    "Smart Screen": ((1.8, 0.5, 1.2),
                     ["Power", "Switch Recipes", "Switch Input Source", "Phone Call", "Timer"]),
    "Oven": ((2.4, 0.9, 2.2), ["Power", "Temperature Control", "Self Cleaning", "Mode Switch"]),
    "Air Cleaner": ((0.6, 1.2, 2.8), ["Power", "Airflow Speed", "Mode Switch"]),
}


def functions():
    entries = []
    for device, (location, names) in DEVICES.items():
        slug = device.lower().replace(" ", "_")
        for name in names:
            entries.append(FunctionEntry(
                id=f"{slug}.{name.lower().replace(' ', '_')}",
                name=f"{device} {name}",
                location=location,
            ))
    return entries


def hand_frames():
    """One gesture: hand below the chest line, raised for ~1 s, lowered."""
    profile = [0.8] * 5 + [0.4] * 11 + [0.8] * 8
    frames = []
    for i, y in enumerate(profile):
        dy = y - FLAT_CENTER_Y
        frames.append({
            "t": round(0.1 * i, 6),
            "lm": [[x, py + dy, z] for x, py, z in FLAT_HAND],
        })
    return frames


def scripted_fixtures():
    def fx(obj):
        return {"match": "sequence", "response": json.dumps(obj)}

    return [
        fx({"candidate_gestures": "open palm facing the camera; likely a stop or activate gesture",
            "time_span": [0, 4]}),
        fx({"movement": "The hand stays essentially still."}),
        fx({"thought": "An open palm could map to several devices; gaze should disambiguate.",
            "question": "Which device is the user looking at?"}),
        fx({"thought": "The gaze context resolves the target device.",
            "answer": "The user is looking at the {{CALC:gaze_target}}."}),
        fx({"thought": "Open palm toward the light most plausibly toggles it.",
            "conclusion": ["light.power", "light.brightness_control", "light.mode_switch"]}),
    ]


def build_dataset(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "gesture.stream.json").write_text(json.dumps({
        "source_view": "first_person",
        "handedness": "right",
        "frames": hand_frames(),
    }))
    gaze = [{"t": 0.9, "x": 0.2, "y": 0.4, "z": 1.5}]
    history = [{"t": 0.0, "description": "turned on the light at 19:00"}]
    external = ["It is 7:05 PM now."]
    lib = ContextLibrary([
        make_function_list_context("Smart Home", functions()),
        make_gaze_context(gaze),
        make_history_context(history),
        make_external_context(external),
    ])
    (out / "library.json").write_text(lib.to_json())
    (out / "fixtures.json").write_text(json.dumps(scripted_fixtures(), indent=2))
    (out / "manifest.json").write_text(json.dumps({
        "tasks": [{
            "scenario_id": "demo_light",
            "stream": "gesture.stream.json",
            "interface": "Smart Home",
            "functions": [
                {"id": f.id, "name": f.name, "location": list(f.location)}
                for f in functions()
            ],
            "gaze": gaze,
            "history": history,
            "external": external,
            "truth": "light.power",
        }]
    }, indent=2))


def run(out: Path) -> int:
    build_dataset(out)
    print(f"== demo data in {out}")

    print("\n== encode")
    code = cli(["encode", str(out / "gesture.stream.json"), "--out-dir", str(out)])
    if code != 0:
        return code

    print("\n== ground")
    code = cli([
        "ground", str(out / "gesture.stream_w00.matrix.json"),
        "--library", str(out / "library.json"),
        "--backend", f"scripted:{out / 'fixtures.json'}",
        "--out-dir", str(out),
    ])
    if code != 0:
        return code

    print("\n== eval (all four context settings, 3 repetitions)")
    code = cli([
        "eval", str(out / "manifest.json"),
        "--backend", f"scripted:{out / 'fixtures.json'}",
        "--repetitions", "3",
        "--out-dir", str(out),
    ])
    print(f"\nartifacts: transcript.jsonl, conclusion.json, report.json, report.csv in {out}")
    return code


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_run", help="output directory")
    args = parser.parse_args()
    sys.exit(run(Path(args.out)))
