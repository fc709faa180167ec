"""Command-line entry points wiring the pipeline stages together.

Exit codes: 0 success, 2 input/validation error, 3 session ended
Negative, 4 transport failure (including an eval setting that completed
zero tasks). Output files are written atomically (temp + rename).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .agents import SessionConfig, ground_matrix
from .context import ContextLibrary, ContextType, add_context_type, render_library_prompt
from .encoder import (
    SegmentationConfig,
    build_state_matrix,
    detect_gesture_window,
    matrix_from_json,
    matrix_to_json,
    sample_window,
    serialize_matrix,
)
from .errors import GestureLinkError, MalformedInput, TransportError
from .evaluation import (
    ContextSetting,
    PipelineHandles,
    load_manifest,
    random_guess_baseline,
    report,
    run_setting,
)
from .landmarks import parse_landmark_stream
from .prompts import load_prompt_set
from .rules import PalmOrientation, RuleThresholds
from .transport import RetryPolicy, load_backend
from .tuning import (
    GridSpec,
    GroundTruthLabel,
    LossWeights,
    MeasuredSample,
    RULE_STATE_SPACES,
    assess,
    assessment_rates,
    default_grid,
    grid_search,
    predictions_for_cell,
    rule_measurement,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NEGATIVE = 3
EXIT_TRANSPORT = 4


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _load_thresholds(path: str | None) -> RuleThresholds:
    if path is None:
        return RuleThresholds()
    return RuleThresholds.from_json(Path(path).read_text())


# --- encode -----------------------------------------------------------------

def cmd_encode(args) -> int:
    raw = Path(args.stream).read_bytes()
    stream = parse_landmark_stream(raw)
    th = _load_thresholds(args.thresholds)
    cfg = SegmentationConfig(
        chest_line=args.chest_line,
        trigger_frames=args.trigger_frames,
        end_hold=args.end_hold,
    )
    windows = detect_gesture_window(stream, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.stream).stem
    for i, window in enumerate(windows):
        matrix = build_state_matrix(sample_window(window), th)
        _write_atomic(out_dir / f"{stem}_w{i:02d}.matrix.json", matrix_to_json(matrix))
        _write_atomic(out_dir / f"{stem}_w{i:02d}.matrix.txt", serialize_matrix(matrix))
    print(f"{len(windows)} windows")
    return EXIT_OK


# --- tune -------------------------------------------------------------------

def _parse_label(rule_id: str, states: list) -> GroundTruthLabel:
    if rule_id == "palm_orientation":
        parsed = frozenset(PalmOrientation(s) for s in states)
    else:
        parsed = frozenset(int(s) for s in states)
    return GroundTruthLabel(acceptable_states=parsed)


def _load_tuning_dataset(path: Path, distance_mode: str):
    """JSON-lines dataset -> {rule_id: [MeasuredSample]}; ambiguous labels
    are filtered out with a logged count. Entries reference an inline
    frame or a stream file plus frame index."""
    per_rule: dict[str, list[MeasuredSample]] = {}
    ambiguous = 0
    stream_cache: dict[str, object] = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            entry = json.loads(line)
            rule_id = entry["rule"]
            label = _parse_label(rule_id, entry["acceptable_states"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise MalformedInput(f"{path}:{line_no}: bad dataset line: {exc}") from exc
        if label.is_ambiguous:
            ambiguous += 1
            continue
        if "frame" in entry:
            frame_doc = {"handedness": "right", "frames": [entry["frame"]]}
            stream = parse_landmark_stream(json.dumps(frame_doc))
            frame = stream.frames[0]
        elif "stream" in entry:
            ref = str(path.parent / entry["stream"])
            if ref not in stream_cache:
                stream_cache[ref] = parse_landmark_stream(Path(ref).read_bytes())
            frame = stream_cache[ref].frames[int(entry.get("frame_index", 0))]
        else:
            raise MalformedInput(f"{path}:{line_no}: needs 'frame' or 'stream'")
        measurement, candidate = rule_measurement(
            frame, rule_id, entry.get("target"), distance_mode
        )
        per_rule.setdefault(rule_id, []).append(
            MeasuredSample(measurement=measurement, label=label, candidate_state=candidate)
        )
    if ambiguous:
        logger.info("filtered %d ambiguous labels from %s", ambiguous, path)
        print(f"filtered {ambiguous} ambiguous labels", file=sys.stderr)
    return per_rule


def _grid_from_file(doc: dict, rule_id: str) -> GridSpec:
    if rule_id not in doc:
        return default_grid(rule_id)
    spec = doc[rule_id]
    if "threshold" in spec:
        return GridSpec.from_ranges(tuple(spec["threshold"]))
    return GridSpec.from_ranges(tuple(spec["low"]), tuple(spec["high"]))


def cmd_tune(args) -> int:
    th_defaults = RuleThresholds()
    per_rule = _load_tuning_dataset(Path(args.dataset), th_defaults.distance_mode)
    if not any(per_rule.values()):
        print("no usable samples after filtering ambiguous labels", file=sys.stderr)
        return EXIT_INPUT
    grid_doc = json.loads(Path(args.grid).read_text()) if args.grid else {}
    weights = LossWeights()
    report_doc: dict = {}
    optima: dict = {}
    for rule_id, samples in sorted(per_rule.items()):
        grid = _grid_from_file(grid_doc, rule_id)
        cell, loss = grid_search(samples, grid, weights)
        space = RULE_STATE_SPACES[rule_id]
        preds = predictions_for_cell(samples, grid.paired, cell, unsure=space.unsure)
        rates = assessment_rates(
            [assess(p, s.label, space) for p, s in zip(preds, samples)]
        )
        report_doc[rule_id] = {
            "parameters": list(cell),
            "loss": loss,
            "rates": rates,
            "samples": len(samples),
        }
        optima[rule_id] = cell
    updated = {
        "flexion_thumb": list(optima.get("flexion_thumb", th_defaults.flexion_thumb)),
        "flexion_finger": list(optima.get("flexion_finger", th_defaults.flexion_finger)),
        "proximity": list(optima.get("proximity", th_defaults.proximity)),
        "contact": list(optima.get("contact", th_defaults.contact)),
        "thumb_dir_angle_threshold": optima.get(
            "thumb_direction", (th_defaults.thumb_dir_angle_threshold,)
        )[0],
        "palm_angle_threshold": optima.get(
            "palm_orientation", (th_defaults.palm_angle_threshold,)
        )[0],
        "distance_mode": th_defaults.distance_mode,
    }
    _write_atomic(Path(args.out), json.dumps(updated, indent=2, sort_keys=True) + "\n")
    _write_atomic(Path(args.report), json.dumps(report_doc, indent=2, sort_keys=True) + "\n")
    for rule_id, entry in sorted(report_doc.items()):
        r = entry["rates"]
        print(
            f"{rule_id}: params={entry['parameters']} loss={entry['loss']:.4f} "
            f"error={r['error']:.3f} unsure={r['unsure']:.3f} correct={r['correct']:.3f}"
        )
    return EXIT_OK


# --- ground -----------------------------------------------------------------

def cmd_ground(args) -> int:
    matrix = matrix_from_json(Path(args.matrix).read_text())
    lib = ContextLibrary.from_json(Path(args.library).read_text())
    if "function_list" not in lib:
        print("context library has no function_list context", file=sys.stderr)
        return EXIT_INPUT
    prompts = load_prompt_set(args.prompts)
    backend = load_backend(args.backend, RetryPolicy(seed=args.seed))
    cfg = SessionConfig(max_rounds=args.max_rounds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        conclusion, transcript = ground_matrix(matrix, lib, prompts, backend, cfg)
    except TransportError as exc:
        partial = getattr(exc, "transcript", None)
        if partial is not None and partial.turns:
            _write_atomic(out_dir / "transcript.jsonl", partial.to_jsonl())
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    _write_atomic(out_dir / "transcript.jsonl", transcript.to_jsonl())
    if conclusion is None:
        _write_atomic(
            out_dir / "conclusion.json",
            json.dumps({"result": "negative"}, indent=2) + "\n",
        )
        print("negative: no usable conclusion")
        return EXIT_NEGATIVE
    _write_atomic(
        out_dir / "conclusion.json",
        json.dumps(
            {"result": "conclusion", "ranked_functions": list(conclusion.ranked_functions)},
            indent=2,
        )
        + "\n",
    )
    print("conclusion:", " > ".join(conclusion.ranked_functions))
    return EXIT_OK


# --- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    tasks = load_manifest(args.manifest)
    th = _load_thresholds(args.thresholds)
    prompts = load_prompt_set(args.prompts)
    settings = (
        [ContextSetting(s.strip()) for s in args.settings.split(",")]
        if args.settings
        else list(ContextSetting)
    )
    policy = RetryPolicy(seed=args.seed)
    handles = PipelineHandles(
        prompts=prompts,
        backend_factory=lambda task: load_backend(args.backend, policy),
        thresholds=th,
        session=SessionConfig(max_rounds=args.max_rounds),
    )
    runs = []
    for setting in settings:
        run = run_setting(tasks, setting, repetitions=args.repetitions, handles=handles, jobs=args.jobs)
        runs.append(run)
        m = run.metrics
        print(
            f"{setting.value}: top1={m.top1.mean:.2%} top3={m.top3.mean:.2%} "
            f"top5={m.top5.mean:.2%} negative={m.negative.mean:.2%} "
            f"(completed {run.completed}, failures {run.failures})"
        )
    doc = report(runs, baseline=random_guess_baseline(tasks))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(out_dir / "report.json", doc.json_text)
    _write_atomic(out_dir / "report.csv", doc.csv_text)
    if any(run.completed == 0 for run in runs):
        print("a setting completed zero tasks", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


# --- context ----------------------------------------------------------------

def cmd_context_add(args) -> int:
    path = Path(args.library)
    lib = (
        ContextLibrary.from_json(path.read_text())
        if path.exists()
        else ContextLibrary([])
    )
    values = json.loads(Path(args.values).read_text()) if args.values else None
    description = (
        Path(args.description_file).read_text()
        if args.description_file
        else args.description
    )
    ctx = ContextType(
        name=args.name,
        description_md=description or "",
        values=values,
        calculator_id=args.calculator,
    )
    lib = add_context_type(lib, ctx)
    _write_atomic(path, lib.to_json())
    print(f"library now holds {len(lib)} context types")
    return EXIT_OK


def cmd_context_show(args) -> int:
    lib = ContextLibrary.from_json(Path(args.library).read_text())
    if args.name:
        print(json.dumps(lib.get(args.name).values, ensure_ascii=False, indent=2))
    else:
        print(render_library_prompt(lib), end="")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gesturelink",
        description=(
            "Encode hand-landmark streams into gesture state matrices, tune "
            "rule thresholds, and ground gestures to interface functions "
            "through an LLM agent dialogue."
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="stream -> gesture state matrices")
    p.add_argument("stream", help="landmark stream JSON file")
    p.add_argument("--thresholds", help="rule thresholds JSON (default: shipped values)")
    p.add_argument("--out-dir", default=".", help="where matrix files go")
    p.add_argument("--chest-line", type=float, default=0.55, help="trigger line (y-down)")
    p.add_argument("--trigger-frames", type=int, default=2)
    p.add_argument("--end-hold", type=float, default=0.6, help="seconds below line to close")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("tune", help="grid-search rule thresholds on a labeled dataset")
    p.add_argument("dataset", help="JSON-lines labeled dataset")
    p.add_argument("--grid", help="grid ranges JSON (default: built-in ranges)")
    p.add_argument("--out", default="thresholds.json", help="tuned thresholds output")
    p.add_argument("--report", default="tuning_report.json", help="per-rule report output")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("ground", help="matrix + context library -> ranked functions")
    p.add_argument("matrix", help="matrix JSON file from encode")
    p.add_argument("--library", required=True, help="context library JSON")
    p.add_argument("--prompts", help="prompt directory (default: shipped prompts)")
    p.add_argument("--backend", required=True, help="scripted:<fixtures.json> or backend config path")
    p.add_argument("--out-dir", default=".", help="transcript/conclusion output directory")
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--seed", type=int, default=None, help="seed for retry jitter")
    p.set_defaults(fn=cmd_ground)

    p = sub.add_parser("eval", help="run the evaluation protocol over a task manifest")
    p.add_argument("manifest", help="dataset manifest JSON")
    p.add_argument("--settings", help="comma list: baseline,only_gaze,only_history_external,all")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--backend", required=True)
    p.add_argument("--thresholds")
    p.add_argument("--prompts")
    p.add_argument("--out-dir", default=".", help="report output directory")
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1, help="parallel sessions per repetition")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("context", help="inspect or extend a context library file")
    ctx_sub = p.add_subparsers(dest="context_command", required=True)
    pa = ctx_sub.add_parser("add", help="add a context type")
    pa.add_argument("--library", required=True)
    pa.add_argument("--name", required=True)
    pa.add_argument("--description", help="markdown description text")
    pa.add_argument("--description-file", help="file with the markdown description")
    pa.add_argument("--values", help="JSON file with the context values")
    pa.add_argument("--calculator", help="calculator id to attach")
    pa.set_defaults(fn=cmd_context_add)
    ps = ctx_sub.add_parser("show", help="render the library or one context's values")
    ps.add_argument("--library", required=True)
    ps.add_argument("--name", help="show this context's values instead of the overview")
    ps.set_defaults(fn=cmd_context_show)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (GestureLinkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
