"""Three-agent orchestration: matrix description, context dialogue, and
final grounding to a ranked function list.

The description stage is two completions (pose, then movement over the
pose's time span). The inference stage is a loop: each model turn either
asks the context agent a question or concludes with up to five ranked
function ids. Parsing is lenient on input (fenced or prefixed JSON is
tolerated, one repair retry per malformed turn) and strict on output
(transcripts store canonical JSON).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .context import (
    PLACEHOLDER_RE,
    ContextLibrary,
    FunctionEntry,
    calculate,
    function_entries,
    render_library_prompt,
)
from .encoder import GestureStateMatrix, serialize_matrix, serialize_movement
from .errors import (
    CalculatorFailure,
    ParseError,
    TransportError,
    UnknownCalculator,
    UnknownContext,
)
from .prompts import AgentPromptSet, render_prompt
from .transport import DEFAULT_MODEL_ID, ChatMessage, CompletionRequest, UsageRecord

logger = logging.getLogger(__name__)

_REPAIR_REMINDER = (
    "Your previous reply could not be parsed. Respond again with exactly one "
    "JSON object in the documented output format, and nothing else."
)
_FORCED_CONCLUSION = (
    "You have reached the round limit. Do not ask further questions: respond "
    "now with your final JSON conclusion ranking up to five function ids."
)


@dataclass(frozen=True)
class SessionConfig:
    max_rounds: int = 10
    parse_retries: int = 1
    temperature: float = 0.0
    model_id: str | None = None

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.parse_retries < 0:
            raise ValueError("parse_retries must be >= 0")


@dataclass(frozen=True)
class PoseDescription:
    candidate_gestures: str
    time_span: tuple[int, int]


@dataclass(frozen=True)
class InferenceTurn:
    """One parsed inference-agent reply: a thought plus either a question
    or a proposed ranking (validated against the function list later)."""

    thought: str
    question: str | None = None
    conclusion: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.question is None) == (self.conclusion is None):
            raise ParseError("inference turn needs exactly one of question/conclusion")


@dataclass(frozen=True)
class ContextTurn:
    thought: str
    answer: str


@dataclass(frozen=True)
class Conclusion:
    """Final ranking, most to least likely; ids validated and unique."""

    ranked_functions: tuple[str, ...]

    def __post_init__(self):
        if not 1 <= len(self.ranked_functions) <= 5:
            raise ParseError("conclusion must rank 1-5 functions")
        if len(set(self.ranked_functions)) != len(self.ranked_functions):
            raise ParseError("conclusion ids must be unique")


@dataclass(frozen=True)
class TranscriptTurn:
    role: str  # description_pose | description_movement | inference | context | outcome
    raw: str
    parsed: dict
    usage: UsageRecord | None = None

    def to_record(self) -> dict:
        return {
            "role": self.role,
            "raw": self.raw,
            "parsed": self.parsed,
            "input_tokens": self.usage.input_tokens if self.usage else 0,
            "output_tokens": self.usage.output_tokens if self.usage else 0,
            "latency": self.usage.latency if self.usage else 0.0,
        }


@dataclass
class DialogueTranscript:
    turns: list[TranscriptTurn] = field(default_factory=list)

    def append(self, turn: TranscriptTurn) -> None:
        self.turns.append(turn)

    @property
    def rounds(self) -> int:
        """Inference-agent rounds (questions plus the concluding turn)."""
        return sum(t.role == "inference" for t in self.turns)

    @property
    def total_input_tokens(self) -> int:
        return sum(t.usage.input_tokens for t in self.turns if t.usage)

    @property
    def total_output_tokens(self) -> int:
        return sum(t.usage.output_tokens for t in self.turns if t.usage)

    @property
    def total_latency(self) -> float:
        return sum(t.usage.latency for t in self.turns if t.usage)

    def to_jsonl(self) -> str:
        return (
            "\n".join(
                json.dumps(t.to_record(), ensure_ascii=False, sort_keys=True)
                for t in self.turns
            )
            + "\n"
        )


def extract_json_object(raw: str) -> dict:
    """First JSON object in raw text; tolerates code fences and prose."""
    text = raw.strip()
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    if "```" in text:
        for block in text.split("```")[1::2]:
            candidate = block.strip()
            if candidate.startswith("json"):
                candidate = candidate[4:].strip()
            try:
                obj = json.loads(candidate)
                if isinstance(obj, dict):
                    return obj
            except json.JSONDecodeError:
                continue
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                        if isinstance(obj, dict):
                            return obj
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise ParseError(f"no JSON object found in response: {raw[:120]!r}")


def parse_inference_turn(raw: str) -> InferenceTurn:
    """Validate the thought + (question xor conclusion) shape."""
    obj = extract_json_object(raw)
    thought = obj.get("thought")
    if not isinstance(thought, str) or not thought.strip():
        raise ParseError("inference turn missing a non-empty 'thought'")
    question = obj.get("question")
    conclusion = obj.get("conclusion")
    if (question is None) == (conclusion is None):
        raise ParseError("inference turn must carry exactly one of question/conclusion")
    if question is not None:
        if not isinstance(question, str) or not question.strip():
            raise ParseError("'question' must be a non-empty string")
        return InferenceTurn(thought=thought, question=question)
    if not isinstance(conclusion, list) or not conclusion:
        raise ParseError("'conclusion' must be a non-empty list of function ids")
    return InferenceTurn(
        thought=thought, conclusion=tuple(str(item) for item in conclusion)
    )


def parse_context_turn(raw: str) -> ContextTurn:
    obj = extract_json_object(raw)
    thought = obj.get("thought")
    answer = obj.get("answer")
    if not isinstance(thought, str) or not isinstance(answer, str) or not answer.strip():
        raise ParseError("context turn needs 'thought' and a non-empty 'answer'")
    return ContextTurn(thought=thought, answer=answer)


def _complete(llm, messages: list[ChatMessage], cfg: SessionConfig):
    req = CompletionRequest(
        messages=tuple(messages),
        temperature=cfg.temperature,
        model_id=cfg.model_id or DEFAULT_MODEL_ID,
    )
    return llm.complete(req)


def _call_with_repair(llm, messages, parser, cfg: SessionConfig):
    """One completion, re-asked up to cfg.parse_retries times with a format
    reminder when the reply cannot be parsed. Returns (parsed, raw, usage)
    or raises ParseError carrying the last raw reply."""
    attempts = cfg.parse_retries + 1
    raw, usage = "", None
    for attempt in range(attempts):
        raw, usage = _complete(llm, messages, cfg)
        try:
            return parser(raw), raw, usage
        except ParseError as exc:
            logger.warning("malformed agent reply (attempt %d): %s", attempt + 1, exc)
            if attempt + 1 == attempts:
                last = ParseError(f"unparseable after {attempts} attempts: {exc}")
                last.raw = raw
                last.usage = usage
                raise last from exc
            messages = messages + [
                ChatMessage("assistant", raw or "(empty)"),
                ChatMessage("user", _REPAIR_REMINDER),
            ]


def describe_pose(
    matrix: GestureStateMatrix,
    prompts: AgentPromptSet,
    llm,
    cfg: SessionConfig | None = None,
    transcript: DialogueTranscript | None = None,
) -> PoseDescription:
    """Pose-channel description: candidate gestures plus the time span,
    clamped to the matrix's column range."""
    cfg = cfg or SessionConfig()
    prompt = render_prompt(
        prompts.description_pose_prompt, matrix_text=serialize_matrix(matrix)
    )

    def parser(raw: str) -> PoseDescription:
        obj = extract_json_object(raw)
        gestures = obj.get("candidate_gestures")
        span = obj.get("time_span")
        if not isinstance(gestures, str) or not gestures.strip():
            raise ParseError("missing 'candidate_gestures'")
        if not (isinstance(span, list) and len(span) == 2):
            raise ParseError("'time_span' must be [start, end]")
        try:
            start, end = int(span[0]), int(span[1])
        except (TypeError, ValueError):
            raise ParseError("'time_span' entries must be integers") from None
        clamped = (min(max(start, 0), matrix.T - 1), min(max(end, 0), matrix.T - 1))
        if clamped != (start, end):
            logger.warning("time span %s clamped to %s for T=%d", (start, end), clamped, matrix.T)
        if clamped[0] > clamped[1]:
            raise ParseError(f"time span reversed: {span}")
        return PoseDescription(candidate_gestures=gestures, time_span=clamped)

    parsed, raw, usage = _call_with_repair(llm, [ChatMessage("user", prompt)], parser, cfg)
    if transcript is not None:
        transcript.append(
            TranscriptTurn(
                role="description_pose",
                raw=raw,
                parsed={
                    "candidate_gestures": parsed.candidate_gestures,
                    "time_span": list(parsed.time_span),
                },
                usage=usage,
            )
        )
    return parsed


def describe_movement(
    matrix: GestureStateMatrix,
    span: tuple[int, int],
    prompts: AgentPromptSet,
    llm,
    cfg: SessionConfig | None = None,
    transcript: DialogueTranscript | None = None,
) -> str:
    """Movement description over the pose's time span."""
    cfg = cfg or SessionConfig()
    prompt = render_prompt(
        prompts.description_movement_prompt,
        movement_text=serialize_movement(matrix, span[0], span[1]),
    )

    def parser(raw: str) -> str:
        obj = extract_json_object(raw)
        movement = obj.get("movement")
        if not isinstance(movement, str):
            raise ParseError("missing 'movement'")
        return movement

    parsed, raw, usage = _call_with_repair(llm, [ChatMessage("user", prompt)], parser, cfg)
    if transcript is not None:
        transcript.append(
            TranscriptTurn(
                role="description_movement",
                raw=raw,
                parsed={"movement": parsed},
                usage=usage,
            )
        )
    return parsed


def compose_description(pose: PoseDescription, movement: str) -> str:
    """Bullet-style gesture description; deterministic byte output."""
    bullets = []
    for line in pose.candidate_gestures.splitlines():
        line = line.strip()
        if line:
            bullets.append(line if line.startswith("- ") else f"- {line}")
    movement = movement.strip()
    if movement:
        bullets.append(movement if movement.startswith("- ") else f"- {movement}")
    return "\n".join(bullets)


def _function_list_text(functions: list[FunctionEntry]) -> str:
    lines = []
    for f in functions:
        loc = ", ".join(f"{v:g}" for v in f.location)
        lines.append(f"- {f.id}: {f.name} (location: {loc})")
    return "\n".join(lines)


def _prune_conclusion(ids: tuple[str, ...], valid: set[str]) -> tuple[str, ...]:
    """Drop unknown ids and duplicates (keep first), cap at five."""
    seen: list[str] = []
    for fid in ids:
        if fid in valid and fid not in seen:
            seen.append(fid)
        elif fid not in valid:
            logger.warning("dropping unknown function id %r from conclusion", fid)
        if len(seen) == 5:
            break
    return tuple(seen)


def _resolve_answer(lib: ContextLibrary, answer: str) -> str:
    """Placeholder resolution that never leaves a token unresolved: failed
    calculations are replaced with an explicit unavailability note."""

    def _sub(match):
        try:
            return calculate(lib, match.group(0))
        except (UnknownCalculator, CalculatorFailure) as exc:
            logger.warning("placeholder %s failed: %s", match.group(0), exc)
            return f"[calculation {match.group(1)} unavailable]"

    return PLACEHOLDER_RE.sub(_sub, answer)


def run_inference_session(
    description: str,
    lib: ContextLibrary,
    prompts: AgentPromptSet,
    llm,
    cfg: SessionConfig | None = None,
    transcript: DialogueTranscript | None = None,
) -> tuple[Conclusion | None, DialogueTranscript]:
    """Inference/context dialogue until a valid conclusion, the round cap
    plus one forced turn, or an irreparable reply (Negative).

    Returns (Conclusion or None, transcript); the transcript always ends
    with an outcome marker. TransportError aborts but carries the partial
    transcript on its .transcript attribute.
    """
    cfg = cfg or SessionConfig()
    transcript = transcript if transcript is not None else DialogueTranscript()
    if "function_list" not in lib:
        raise UnknownContext("session needs a function_list context")
    functions = function_entries(lib)
    valid_ids = {f.id for f in functions}

    inference_messages = [
        ChatMessage("system", render_prompt(
            prompts.inference_prompt, function_list=_function_list_text(functions)
        )),
        ChatMessage("user", f"Gesture description:\n{description}"),
    ]
    context_messages = [
        ChatMessage("system", render_prompt(
            prompts.context_prompt, library_overview=render_library_prompt(lib)
        )),
    ]

    def negative(reason: str) -> tuple[None, DialogueTranscript]:
        transcript.append(
            TranscriptTurn(
                role="outcome", raw="", parsed={"result": "negative", "reason": reason}
            )
        )
        return None, transcript

    try:
        rounds = 0
        forced = False
        while True:
            rounds += 1
            try:
                turn, raw, usage = _call_with_repair(
                    llm, inference_messages, parse_inference_turn, cfg
                )
            except ParseError as exc:
                transcript.append(
                    TranscriptTurn(
                        role="inference",
                        raw=getattr(exc, "raw", ""),
                        parsed={"error": str(exc)},
                        usage=getattr(exc, "usage", None),
                    )
                )
                return negative(f"unparseable inference turn: {exc}")
            parsed_doc = {"thought": turn.thought}
            if turn.question is not None:
                parsed_doc["question"] = turn.question
            else:
                parsed_doc["conclusion"] = list(turn.conclusion)
            transcript.append(
                TranscriptTurn(role="inference", raw=raw, parsed=parsed_doc, usage=usage)
            )
            inference_messages.append(ChatMessage("assistant", raw or "(empty)"))

            if turn.conclusion is not None:
                kept = _prune_conclusion(turn.conclusion, valid_ids)
                if not kept:
                    return negative("conclusion contained no valid function ids")
                conclusion = Conclusion(ranked_functions=kept)
                transcript.append(
                    TranscriptTurn(
                        role="outcome",
                        raw="",
                        parsed={"result": "conclusion", "ranked": list(kept)},
                    )
                )
                return conclusion, transcript

            if forced:
                return negative("no conclusion after the forced turn")
            if rounds >= cfg.max_rounds:
                forced = True
                inference_messages.append(ChatMessage("user", _FORCED_CONCLUSION))
                continue

            context_messages.append(ChatMessage("user", turn.question))
            try:
                ctx_turn, ctx_raw, ctx_usage = _call_with_repair(
                    llm, context_messages, parse_context_turn, cfg
                )
                answer = ctx_turn.answer
                ctx_parsed = {"thought": ctx_turn.thought, "answer": ctx_turn.answer}
            except ParseError as exc:
                # Lenient fallback: deliver the raw reply as the answer.
                ctx_raw = getattr(exc, "raw", "")
                ctx_usage = getattr(exc, "usage", None)
                answer = ctx_raw or "no answer available"
                ctx_parsed = {"answer": answer, "parse_fallback": True}
            resolved = _resolve_answer(lib, answer)
            ctx_parsed["delivered"] = resolved
            transcript.append(
                TranscriptTurn(role="context", raw=ctx_raw, parsed=ctx_parsed, usage=ctx_usage)
            )
            context_messages.append(ChatMessage("assistant", ctx_raw or "(empty)"))
            inference_messages.append(
                ChatMessage("user", f"Context Management Agent: {resolved}")
            )
    except TransportError as exc:
        exc.transcript = transcript
        raise


def ground_matrix(
    matrix: GestureStateMatrix,
    lib: ContextLibrary,
    prompts: AgentPromptSet,
    llm,
    cfg: SessionConfig | None = None,
) -> tuple[Conclusion | None, DialogueTranscript]:
    """Full grounding of one matrix: describe (pose + movement), compose,
    then run the inference session. One transcript covers all stages."""
    cfg = cfg or SessionConfig()
    transcript = DialogueTranscript()
    try:
        pose = describe_pose(matrix, prompts, llm, cfg, transcript)
        movement = describe_movement(matrix, pose.time_span, prompts, llm, cfg, transcript)
    except ParseError as exc:
        transcript.append(
            TranscriptTurn(
                role="outcome",
                raw="",
                parsed={"result": "negative", "reason": f"description failed: {exc}"},
            )
        )
        return None, transcript
    except TransportError as exc:
        exc.transcript = transcript
        raise
    description = compose_description(pose, movement)
    return run_inference_session(description, lib, prompts, llm, cfg, transcript)
