"""Context library: named context types served to the agent dialogue.

A library stores ordered context types (markdown description + JSON
values + optional calculator id) and supports three operations: adding
types, retrieving values (optionally at a sub-path), and calculating
derived values through placeholder tokens of the form
``{{CALC:<id>}}`` or ``{{CALC:<id>:<json-args>}}``.
"""

from __future__ import annotations

import copy
import json
import math
import re
import subprocess
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .errors import (
    BadPath,
    CalculatorFailure,
    DuplicateName,
    MalformedInput,
    UnknownCalculator,
    UnknownContext,
)

PLACEHOLDER_RE = re.compile(r"\{\{CALC:([A-Za-z0-9_\-]+)(?::(.+?))?\}\}")

# Gaze samples within this many seconds of the newest sample count as
# "recent" for the built-in gaze calculators. The window length is an
# artifact choice, not a tuned value.
GAZE_WINDOW_SECONDS = 1.0


@dataclass(frozen=True)
class ContextType:
    """One named context: markdown description, structured values, and an
    optional calculator that derives values on demand."""

    name: str
    description_md: str
    values: Any = None
    calculator_id: str | None = None

    def __post_init__(self):
        if not self.name:
            raise MalformedInput("context name must be non-empty")
        if not self.description_md.strip():
            raise MalformedInput("context description must be non-empty")


@dataclass(frozen=True)
class FunctionEntry:
    """One interface function: unique id, display name, and a 2D or 3D
    location in the interface's coordinate system."""

    id: str
    name: str
    location: tuple[float, ...]
    metadata: str | None = None


@dataclass(frozen=True)
class CalculatorSpec:
    """A registered calculator: an in-process callable or an external
    process reading {"library", "args"} JSON on stdin and writing its
    text result to stdout (exit 0 on success)."""

    id: str
    kind: str  # "plugin" | "process"
    fn: Callable[["ContextLibrary", dict], str] | None = None
    argv: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("plugin", "process"):
            raise MalformedInput("calculator kind must be plugin or process")
        if self.kind == "plugin" and self.fn is None:
            raise MalformedInput("plugin calculator needs fn")
        if self.kind == "process" and not self.argv:
            raise MalformedInput("process calculator needs argv")


class ContextLibrary:
    """Ordered map of context types plus a calculator registry.

    Reads never mutate; add_context_type returns a new library so shared
    instances stay safe across concurrent sessions.
    """

    def __init__(
        self,
        contexts: Sequence[ContextType] = (),
        calculators: dict[str, CalculatorSpec] | None = None,
    ):
        self._entries: dict[str, ContextType] = {}
        for ctx in contexts:
            if ctx.name in self._entries:
                raise DuplicateName(f"duplicate context name: {ctx.name!r}")
            self._entries[ctx.name] = ctx
        self.calculators = dict(calculators) if calculators is not None else dict(
            BUILTIN_CALCULATORS
        )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    def get(self, name: str) -> ContextType:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownContext(f"no context named {name!r}") from None

    def filtered(self, keep: Sequence[str]) -> "ContextLibrary":
        """Library restricted to the given context names (order kept)."""
        return ContextLibrary(
            [c for c in self._entries.values() if c.name in set(keep)],
            calculators=self.calculators,
        )

    def to_json(self) -> str:
        doc = {
            "contexts": [
                {
                    "name": c.name,
                    "description_md": c.description_md,
                    "values": c.values,
                    "calculator_id": c.calculator_id,
                }
                for c in self._entries.values()
            ]
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def from_json(
        cls, text: str | bytes, calculators: dict[str, CalculatorSpec] | None = None
    ) -> "ContextLibrary":
        try:
            doc = json.loads(text)
            contexts = [
                ContextType(
                    name=entry["name"],
                    description_md=entry["description_md"],
                    values=entry.get("values"),
                    calculator_id=entry.get("calculator_id"),
                )
                for entry in doc["contexts"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedInput(f"bad context library JSON: {exc}") from exc
        return cls(contexts, calculators=calculators)


def add_context_type(lib: ContextLibrary, ctx: ContextType) -> ContextLibrary:
    """New library with ctx appended; name collisions are rejected."""
    if ctx.name in lib:
        raise DuplicateName(f"context {ctx.name!r} already present")
    return ContextLibrary(
        [lib.get(n) for n in lib.names] + [ctx], calculators=lib.calculators
    )


def retrieve(lib: ContextLibrary, name: str, query: str | None = None) -> Any:
    """values of the named context, or the sub-tree at a dotted path.

    Path segments index dicts by key and lists by integer or the
    keywords first/last.
    """
    value = lib.get(name).values
    if query is None or query == "":
        return copy.deepcopy(value)
    node = value
    for segment in query.split("."):
        if isinstance(node, dict):
            if segment not in node:
                raise BadPath(f"no key {segment!r} under {name}:{query}")
            node = node[segment]
        elif isinstance(node, list):
            if segment == "last":
                idx = len(node) - 1
            elif segment == "first":
                idx = 0
            else:
                try:
                    idx = int(segment)
                except ValueError:
                    raise BadPath(f"list index expected at {segment!r}") from None
            if not (-len(node) <= idx < len(node)) or not node:
                raise BadPath(f"index {segment!r} out of range in {name}:{query}")
            node = node[idx]
        else:
            raise BadPath(f"cannot descend into scalar at {segment!r}")
    return copy.deepcopy(node)


def calculate(lib: ContextLibrary, placeholder: str) -> str:
    """Run the calculator a placeholder names and return its text output."""
    match = PLACEHOLDER_RE.fullmatch(placeholder.strip())
    if not match:
        raise UnknownCalculator(f"not a calculation placeholder: {placeholder!r}")
    calc_id, raw_args = match.group(1), match.group(2)
    if calc_id not in lib.calculators:
        raise UnknownCalculator(f"no calculator registered as {calc_id!r}")
    args: dict = {}
    if raw_args:
        try:
            args = json.loads(raw_args)
        except json.JSONDecodeError as exc:
            raise CalculatorFailure(
                f"bad calculator args for {calc_id}", diagnostics=str(exc)
            ) from exc
    spec = lib.calculators[calc_id]
    if spec.kind == "plugin":
        try:
            return spec.fn(lib, args)
        except Exception as exc:  # noqa: BLE001 - diagnostics wrapped for the caller
            raise CalculatorFailure(
                f"calculator {calc_id} raised", diagnostics=repr(exc)
            ) from exc
    payload = json.dumps({"library": json.loads(lib.to_json()), "args": args})
    try:
        proc = subprocess.run(
            list(spec.argv), input=payload.encode(), capture_output=True, timeout=30
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise CalculatorFailure(
            f"calculator {calc_id} failed to run", diagnostics=repr(exc)
        ) from exc
    if proc.returncode != 0:
        raise CalculatorFailure(
            f"calculator {calc_id} exited {proc.returncode}",
            diagnostics=proc.stderr.decode(errors="replace"),
        )
    return proc.stdout.decode().strip()


def resolve_placeholders(lib: ContextLibrary, text: str) -> str:
    """Replace every calculation placeholder in text with its output."""
    def _sub(match: re.Match) -> str:
        return calculate(lib, match.group(0))

    return PLACEHOLDER_RE.sub(_sub, text)


def render_library_prompt(lib: ContextLibrary) -> str:
    """Deterministic markdown overview (names + descriptions, no values)
    for embedding in the context agent prompt."""
    lines = ["# Context Library", ""]
    for name in lib.names:
        ctx = lib.get(name)
        lines.append(f"## {name}")
        lines.append(ctx.description_md.strip())
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


# --- standard context builders -------------------------------------------

def make_function_list_context(
    interface_name: str, functions: Sequence[FunctionEntry]
) -> ContextType:
    ids = [f.id for f in functions]
    if len(set(ids)) != len(ids):
        raise MalformedInput("function ids must be unique")
    return ContextType(
        name="function_list",
        description_md=(
            "Interface functions the user can trigger. Each entry has a "
            "unique `id`, a human-readable `name`, and a `location` in the "
            "interface coordinate system."
        ),
        values={
            "interface": interface_name,
            "functions": [
                {
                    "id": f.id,
                    "name": f.name,
                    "location": list(f.location),
                    **({"metadata": f.metadata} if f.metadata else {}),
                }
                for f in functions
            ],
        },
    )


def make_gaze_context(samples: Sequence[dict]) -> ContextType:
    return ContextType(
        name="gaze",
        description_md=(
            "Recent gaze samples as `{t, x, y[, z]}` records, oldest first. "
            "Use the gaze_target calculator to resolve which function the "
            "user is looking at."
        ),
        values=list(samples),
        calculator_id="gaze_target",
    )


def make_history_context(events: Sequence[dict]) -> ContextType:
    return ContextType(
        name="history",
        description_md=(
            "The user's recent interactions, oldest first, as "
            "`{t, description}` records."
        ),
        values=list(events),
    )


def make_external_context(notes: Sequence[str]) -> ContextType:
    return ContextType(
        name="external",
        description_md="Information reported by other devices or sensors.",
        values=list(notes),
    )


def function_entries(lib: ContextLibrary) -> list[FunctionEntry]:
    """FunctionEntry objects parsed out of the function_list context."""
    values = lib.get("function_list").values or {}
    entries = []
    for item in values.get("functions", []):
        entries.append(
            FunctionEntry(
                id=str(item["id"]),
                name=str(item["name"]),
                location=tuple(float(v) for v in item.get("location", ())),
                metadata=item.get("metadata"),
            )
        )
    return entries


# --- built-in calculators --------------------------------------------------

def _recent_gaze(lib: ContextLibrary, args: dict) -> list[dict]:
    samples = lib.get(args.get("context", "gaze")).values or []
    if not samples:
        return []
    window = float(args.get("window", GAZE_WINDOW_SECONDS))
    newest = max(float(s["t"]) for s in samples)
    return [s for s in samples if float(s["t"]) >= newest - window]


def _gaze_target(lib: ContextLibrary, args: dict) -> str:
    """Name of the function nearest the recent-gaze centroid; ties go to
    the lower function id."""
    recent = _recent_gaze(lib, args)
    if not recent:
        return "no gaze data available"
    centroid = [
        float(_mean([float(s["x"]) for s in recent])),
        float(_mean([float(s["y"]) for s in recent])),
        float(_mean([float(s.get("z", 0.0)) for s in recent])),
    ]
    functions = function_entries(lib)
    if not functions:
        raise MalformedInput("gaze_target needs a function_list context")

    def dist(entry: FunctionEntry) -> float:
        dims = min(len(entry.location), 3 if any("z" in s for s in recent) else 2)
        return math.sqrt(
            sum((centroid[i] - entry.location[i]) ** 2 for i in range(dims))
        )

    best = min(functions, key=lambda f: (dist(f), f.id))
    return best.name


def _gaze_trace(lib: ContextLibrary, args: dict) -> str:
    """Raw recent gaze samples as compact JSON."""
    return json.dumps(_recent_gaze(lib, args), ensure_ascii=False)


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


BUILTIN_CALCULATORS = {
    "gaze_target": CalculatorSpec(id="gaze_target", kind="plugin", fn=_gaze_target),
    "gaze_trace": CalculatorSpec(id="gaze_trace", kind="plugin", fn=_gaze_trace),
}
