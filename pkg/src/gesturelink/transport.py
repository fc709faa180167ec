"""Chat-completion backends: a live HTTP provider and a deterministic
scripted backend for offline replay, plus a retry wrapper.

Scripted fixtures make every downstream stage reproducible: the backend
returns canned responses either in call order ("sequence") or keyed by a
stable hash of the request messages ("hash"), with token usage
approximated as ceil(chars / 4) so accounting tests run offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Protocol

from .errors import (
    AuthError,
    FixtureExhausted,
    MalformedInput,
    RateLimited,
    TransportError,
)

DEFAULT_MODEL_ID = "gpt-4-1106-preview"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise MalformedInput(f"bad message role: {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise MalformedInput(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    model_id: str = DEFAULT_MODEL_ID

    def __post_init__(self):
        if not self.messages:
            raise MalformedInput("request needs at least one message")
        if self.temperature < 0:
            raise MalformedInput("temperature must be >= 0")


@dataclass(frozen=True)
class UsageRecord:
    input_tokens: int
    output_tokens: int
    latency: float = 0.0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise MalformedInput("token counts must be >= 0")


class Backend(Protocol):
    deterministic: bool

    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]: ...


def approx_tokens(text: str) -> int:
    """Offline token approximation: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


def message_hash(messages: tuple[ChatMessage, ...]) -> str:
    """Stable key for hash-matched fixtures."""
    doc = json.dumps(
        [{"role": m.role, "content": m.content} for m in messages], sort_keys=True
    )
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


class ScriptedBackend:
    """Replays fixture responses; pure given the fixture file and the
    call sequence. Sequence fixtures are consumed in order; hash fixtures
    are keyed by message_hash and reusable."""

    deterministic = True

    def __init__(self, fixtures: list[dict]):
        self._queue: list[str] = []
        self._by_hash: dict[str, str] = {}
        for i, fx in enumerate(fixtures):
            match = fx.get("match", "sequence")
            if match == "sequence":
                self._queue.append(fx["response"])
            elif match == "hash":
                if "key" not in fx:
                    raise MalformedInput(f"hash fixture #{i} needs a 'key'")
                self._by_hash[fx["key"]] = fx["response"]
            else:
                raise MalformedInput(f"fixture #{i} has unknown match {match!r}")
        self._cursor = 0
        self.calls = 0

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        with open(path, "rb") as fh:
            try:
                fixtures = json.load(fh)
            except json.JSONDecodeError as exc:
                raise MalformedInput(f"bad fixture file {path}: {exc}") from exc
        if not isinstance(fixtures, list):
            raise MalformedInput("fixture file must hold a JSON array")
        return cls(fixtures)

    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]:
        self.calls += 1
        key = message_hash(req.messages)
        if key in self._by_hash:
            response = self._by_hash[key]
        elif self._cursor < len(self._queue):
            response = self._queue[self._cursor]
            self._cursor += 1
        else:
            raise FixtureExhausted(
                f"no fixture for call {self.calls} (hash {key}, "
                f"{len(self._queue)} sequence fixtures consumed)"
            )
        usage = UsageRecord(
            input_tokens=sum(approx_tokens(m.content) for m in req.messages),
            output_tokens=approx_tokens(response),
            latency=0.0,
        )
        return response, usage


@dataclass(frozen=True)
class BackendConfig:
    """Live provider settings; the API key itself stays in the environment."""

    provider_url: str = "https://api.openai.com/v1/chat/completions"
    model_id: str = DEFAULT_MODEL_ID
    timeout: float = 120.0
    api_key_env: str = "OPENAI_API_KEY"

    @classmethod
    def from_file(cls, path: str) -> "BackendConfig":
        with open(path, "rb") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise MalformedInput(f"bad backend config {path}: {exc}") from exc
        return cls(
            provider_url=doc.get("provider_url", cls.provider_url),
            model_id=doc.get("model_id", cls.model_id),
            timeout=float(doc.get("timeout", cls.timeout)),
            api_key_env=doc.get("api_key_env", cls.api_key_env),
        )


class LiveBackend:
    """OpenAI-compatible chat-completions client over HTTP."""

    deterministic = False

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()

    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]:
        api_key = os.environ.get(self.config.api_key_env)
        if not api_key:
            raise AuthError(
                f"no API key in ${self.config.api_key_env}; set it or use a scripted backend"
            )
        body = json.dumps(
            {
                "model": req.model_id or self.config.model_id,
                "temperature": req.temperature,
                "messages": [
                    {"role": m.role, "content": m.content} for m in req.messages
                ],
            }
        ).encode()
        request = urllib.request.Request(
            self.config.provider_url,
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {api_key}",
            },
            method="POST",
        )
        started = time.monotonic()
        try:
            with urllib.request.urlopen(request, timeout=self.config.timeout) as resp:
                payload = json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode(errors="replace")[:500]
            if exc.code == 429:
                raise RateLimited(f"rate limited: {detail}") from exc
            if exc.code in (401, 403):
                raise AuthError(f"credentials rejected: {detail}") from exc
            raise TransportError(f"HTTP {exc.code}: {detail}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"request failed: {exc}") from exc
        latency = time.monotonic() - started
        try:
            text = payload["choices"][0]["message"]["content"]
            usage = payload.get("usage", {})
            record = UsageRecord(
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
                latency=latency,
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {exc}") from exc
        return text, record


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 30.0
    seed: int | None = None

    def __post_init__(self):
        if self.max_attempts < 1:
            raise MalformedInput("max_attempts must be >= 1")


class RetryingBackend:
    """Retries transient failures with exponential backoff + full jitter.

    AuthError and FixtureExhausted are permanent; deterministic backends
    are never retried at all (a replay cannot transiently fail).
    """

    def __init__(self, inner, policy: RetryPolicy, sleep=time.sleep):
        self.inner = inner
        self.policy = policy
        self._sleep = sleep
        self._rng = random.Random(policy.seed)
        self.last_attempts = 0

    @property
    def deterministic(self) -> bool:
        return self.inner.deterministic

    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]:
        if self.inner.deterministic:
            self.last_attempts = 1
            return self.inner.complete(req)
        last_error: TransportError | None = None
        for attempt in range(1, self.policy.max_attempts + 1):
            self.last_attempts = attempt
            try:
                return self.inner.complete(req)
            except (AuthError, FixtureExhausted):
                raise
            except (RateLimited, TransportError) as exc:
                last_error = exc
                if attempt == self.policy.max_attempts:
                    break
                cap = min(self.policy.base_delay * 2 ** (attempt - 1), self.policy.max_delay)
                self._sleep(self._rng.uniform(0, cap))
        raise last_error


def with_retry(backend, policy: RetryPolicy | None = None, sleep=time.sleep) -> RetryingBackend:
    return RetryingBackend(backend, policy or RetryPolicy(), sleep=sleep)


def load_backend(spec: str, policy: RetryPolicy | None = None):
    """CLI backend selector: "scripted:<fixtures.json>" for replay, or a
    path to a live BackendConfig JSON (optionally "live:<config.json>")."""
    if spec.startswith("scripted:"):
        return ScriptedBackend.from_file(spec.split(":", 1)[1])
    path = spec.split(":", 1)[1] if spec.startswith("live:") else spec
    return with_retry(LiveBackend(BackendConfig.from_file(path)), policy)
