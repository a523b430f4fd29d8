"""Uniform access to text-generation backends.

Three interchangeable backends sit behind one ``generate(request)`` surface:

* ``HttpChatBackend`` — a live OpenAI-compatible ``/chat/completions`` client
  with bounded retries; one wire format covers every hosted model we target.
* ``MockBackend`` — a deterministic scripted backend for offline tests of the
  orchestration state machine.
* ``CachingBackend`` — a persistent JSON-lines response cache layered over
  either of the above. Only temperature-0 requests are cached, because those
  are the only ones with a deterministic backend contract.

No other module builds wire payloads or touches HTTP.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple, Protocol

import httpx

from .errors import ConfigurationError, ProtocolError, ScriptMissError, TransportError

ENV_API_BASE = "EOP_API_BASE"
ENV_API_KEY = "EOP_API_KEY"

DEFAULT_MAX_TOKENS = 1024

_VALID_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


class TokenUsage(NamedTuple):
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class GenerationRequest:
    """One chat-completion request; immutable so it can be hashed and cached."""

    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    model_id: str = "default"
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for msg in self.messages:
            if msg.role not in _VALID_ROLES:
                raise ValueError(f"invalid message role: {msg.role!r}")
        if self.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        # floats only, so the canonical serialization is stable (0 vs 0.0)
        object.__setattr__(self, "temperature", float(self.temperature))

    @classmethod
    def for_prompt(cls, prompt: str, **kwargs) -> "GenerationRequest":
        return cls(messages=(ChatMessage("user", prompt),), **kwargs)

    def rendered_prompt(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass
class GenerationResponse:
    text: str
    token_usage: TokenUsage
    from_cache: bool = False
    latency_ms: int = 0


def request_payload(request: GenerationRequest) -> dict:
    """Canonical dict form of a request (hashing and cache records)."""
    return {
        "model_id": request.model_id,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "stop_sequences": list(request.stop_sequences),
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
    }


def cache_key(request: GenerationRequest) -> str:
    """Stable content hash of a request.

    Identical requests hash identically across runs and platforms: the
    payload is serialized with sorted keys and compact separators before
    being fed to SHA-256.
    """
    canonical = json.dumps(
        request_payload(request), sort_keys=True, ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResponse: ...


# --- scripted mock ------------------------------------------------------------


@dataclass
class MockEntry:
    matcher: str
    responses: list[str]
    regex: bool = False

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.matcher, prompt) is not None
        return self.matcher in prompt


@dataclass
class MockScript:
    """Ordered matcher table driving a MockBackend.

    Matching is first-match by entry order; each matched entry yields its
    responses in sequence across successive calls and repeats the last one
    when exhausted.
    """

    entries: list[MockEntry] = field(default_factory=list)
    default_response: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        raw_entries = data.get("entries")
        if not isinstance(raw_entries, list):
            raise ConfigurationError("mock script needs an 'entries' array")
        entries = []
        for i, raw in enumerate(raw_entries):
            if not isinstance(raw, dict) or "match" not in raw:
                raise ConfigurationError(f"mock script entry {i}: missing 'match'")
            responses = raw.get("responses")
            if not isinstance(responses, list) or not responses:
                raise ConfigurationError(f"mock script entry {i}: 'responses' must be a non-empty array")
            entries.append(
                MockEntry(
                    matcher=str(raw["match"]),
                    responses=[str(r) for r in responses],
                    regex=bool(raw.get("regex", False)),
                )
            )
        return cls(entries=entries, default_response=data.get("default_response"))

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot load mock script {path}: {exc}") from exc
        return cls.from_dict(data)


class MockBackend:
    """Deterministic scripted backend; per-entry cursors advance under a lock
    so scripted sequences stay well-defined under concurrency."""

    def __init__(self, script: MockScript):
        self.script = script
        self.call_count = 0
        self._cursors = [0] * len(script.entries)
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        prompt = request.rendered_prompt()
        with self._lock:
            self.call_count += 1
            for i, entry in enumerate(self.script.entries):
                if entry.matches(prompt):
                    idx = min(self._cursors[i], len(entry.responses) - 1)
                    self._cursors[i] += 1
                    text = entry.responses[idx]
                    return GenerationResponse(
                        text=text,
                        token_usage=TokenUsage(len(prompt.split()), len(text.split())),
                    )
            if self.script.default_response is not None:
                text = self.script.default_response
                return GenerationResponse(
                    text=text,
                    token_usage=TokenUsage(len(prompt.split()), len(text.split())),
                )
        raise ScriptMissError(f"no script entry matches prompt starting {prompt[:80]!r}")


# --- live HTTP backend --------------------------------------------------------

_RETRIABLE_STATUS = {429, 500, 502, 503, 504}


class HttpChatBackend:
    """OpenAI-compatible chat-completions client.

    POSTs to ``{base_url}/chat/completions`` and reads the completion from
    ``choices[0].message.content``. Transport failures, 429 and 5xx are
    retried up to ``max_attempts`` with exponential backoff starting at
    ``backoff_base`` seconds, then surfaced as TransportError.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        sleep=time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, environ=os.environ, **kwargs) -> "HttpChatBackend":
        base_url = environ.get(ENV_API_BASE)
        if not base_url:
            raise ConfigurationError(f"{ENV_API_BASE} is not set and no mock script was given")
        return cls(base_url, environ.get(ENV_API_KEY), **kwargs)

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        body = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        started = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._client.post(
                    f"{self.base_url}/chat/completions", json=body, headers=headers
                )
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code in _RETRIABLE_STATUS:
                last_error = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp, started)
        raise TransportError(f"request failed after {self.max_attempts} attempts: {last_error}")

    def _parse(self, resp: httpx.Response, started: float) -> GenerationResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion payload: {exc}") from exc
        if not isinstance(text, str):
            raise ProtocolError("completion content is not a string")
        usage = data.get("usage") or {}
        return GenerationResponse(
            text=text.rstrip(),
            token_usage=TokenUsage(
                int(usage.get("prompt_tokens", 0) or 0),
                int(usage.get("completion_tokens", 0) or 0),
            ),
            latency_ms=int((time.monotonic() - started) * 1000),
        )

    def close(self):
        self._client.close()


# --- persistent cache ---------------------------------------------------------


class ResponseCache:
    """Append-only JSON-lines response store keyed by request digest.

    One record per line makes writes atomic at record granularity and the
    file safe to share read-only across processes.
    """

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._index: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    self._index[record["key"]] = record["response_text"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    continue  # a torn trailing line is not fatal

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str) -> str | None:
        return self._index.get(key)

    def put(self, key: str, request: GenerationRequest, response_text: str) -> None:
        record = {
            "key": key,
            "model_id": request.model_id,
            "request": request_payload(request),
            "response_text": response_text,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        line = json.dumps(record, ensure_ascii=False) + "\n"
        with self._lock:
            self._index[key] = response_text
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line)
                    fh.flush()


class CachingBackend:
    """Serve temperature-0 requests from a ResponseCache, else delegate.

    Nonzero-temperature requests always pass through: their outputs are not
    deterministic per request, so replaying a stored response would silently
    collapse sampled diversity.
    """

    def __init__(self, inner: Backend, cache: ResponseCache):
        self.inner = inner
        self.cache = cache

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        if request.temperature != 0.0:
            return self.inner.generate(request)
        key = cache_key(request)
        hit = self.cache.get(key)
        if hit is not None:
            return GenerationResponse(
                text=hit, token_usage=TokenUsage(0, 0), from_cache=True, latency_ms=0
            )
        response = self.inner.generate(request)
        self.cache.put(key, request, response.text)
        return response
