from __future__ import annotations

import hashlib
import json
import random
import threading

import httpx
import pytest

from eop.errors import ConfigurationError, ProtocolError, ScriptMissError, TransportError
from eop.gateway import (
    CachingBackend,
    ChatMessage,
    GenerationRequest,
    HttpChatBackend,
    MockBackend,
    MockScript,
    ResponseCache,
    cache_key,
    request_payload,
)

from conftest import make_mock


def req(prompt: str, **kwargs) -> GenerationRequest:
    return GenerationRequest.for_prompt(prompt, **kwargs)


# --- request validation -------------------------------------------------------


def test_request_requires_user_last() -> None:
    with pytest.raises(ValueError):
        GenerationRequest(messages=(ChatMessage("assistant", "hi"),))
    with pytest.raises(ValueError):
        GenerationRequest(messages=())


def test_request_rejects_bad_knobs() -> None:
    with pytest.raises(ValueError):
        req("q", temperature=-0.1)
    with pytest.raises(ValueError):
        req("q", max_tokens=0)


# --- cache keys -----------------------------------------------------------------


def test_cache_key_includes_temperature() -> None:
    assert cache_key(req("q", temperature=0.0)) != cache_key(req("q", temperature=0.8))


def test_cache_key_ignores_construction_order() -> None:
    a = GenerationRequest(
        messages=(ChatMessage("system", "s"), ChatMessage("user", "u")),
        temperature=0.0,
        max_tokens=64,
        model_id="m",
    )
    b = GenerationRequest(
        model_id="m",
        max_tokens=64,
        temperature=0,
        messages=[ChatMessage("system", "s"), ChatMessage("user", "u")],
    )
    assert cache_key(a) == cache_key(b)


def test_cache_key_matches_independent_recomputation() -> None:
    # recompute the digest with a hand-rolled canonical serialization
    request = req("What is the capital of France?", temperature=0.0, max_tokens=128, model_id="m1")
    canonical = json.dumps(
        {
            "max_tokens": 128,
            "messages": [{"content": "What is the capital of France?", "role": "user"}],
            "model_id": "m1",
            "stop_sequences": [],
            "temperature": 0.0,
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    assert cache_key(request) == hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def test_cache_key_collision_scan_over_generated_corpus() -> None:
    rng = random.Random(5)
    digests = set()
    for i in range(1000):
        request = GenerationRequest.for_prompt(
            f"prompt {i} {rng.random()}",
            temperature=rng.choice([0.0, 0.8]),
            max_tokens=rng.choice([64, 128]),
            model_id=rng.choice(["a", "b"]),
        )
        digests.add(cache_key(request))
    assert len(digests) == 1000


# --- mock backend -----------------------------------------------------------------


def test_mock_first_match_by_entry_order() -> None:
    backend = make_mock(("capital of France", ["Paris"]), ("capital", ["Generic"]))
    out = backend.generate(req("What is the capital of France?"))
    assert out.text == "Paris"
    assert out.from_cache is False


def test_mock_sequences_and_repeats_last() -> None:
    backend = make_mock(("q", ["first", "second"]))
    outs = [backend.generate(req("q")).text for _ in range(4)]
    assert outs == ["first", "second", "second", "second"]


def test_mock_default_response_and_miss() -> None:
    backend = make_mock(("nope", ["x"]), default="fallback")
    assert backend.generate(req("something else")).text == "fallback"
    strict = make_mock(("nope", ["x"]))
    with pytest.raises(ScriptMissError):
        strict.generate(req("something else"))


def test_mock_regex_matcher() -> None:
    script = MockScript.from_dict(
        {"entries": [{"match": r"(?s)premises.*Q7", "regex": True, "responses": ["ok"]}]}
    )
    backend = MockBackend(script)
    assert backend.generate(req("extract premises\nfrom Q7 please")).text == "ok"


def test_mock_script_validation() -> None:
    with pytest.raises(ConfigurationError):
        MockScript.from_dict({})
    with pytest.raises(ConfigurationError):
        MockScript.from_dict({"entries": [{"match": "x", "responses": []}]})
    with pytest.raises(ConfigurationError):
        MockScript.from_dict({"entries": [{"responses": ["y"]}]})


def test_mock_replay_determinism() -> None:
    script = {"entries": [{"match": "q", "responses": ["a", "b", "c"]}]}
    runs = []
    for _ in range(3):
        backend = MockBackend(MockScript.from_dict(script))
        runs.append([backend.generate(req(f"q {i}")).text for i in range(5)])
    assert runs[0] == runs[1] == runs[2]


def test_mock_cursor_is_thread_safe() -> None:
    backend = make_mock(("q", [str(i) for i in range(64)]))
    seen: list[str] = []
    lock = threading.Lock()

    def worker() -> None:
        for _ in range(8):
            text = backend.generate(req("q")).text
            with lock:
                seen.append(text)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # every scripted response consumed exactly once
    assert sorted(seen, key=int) == [str(i) for i in range(64)]


# --- caching layer -----------------------------------------------------------------


def test_cache_hit_skips_backend(tmp_path) -> None:
    mock = make_mock(("capital of France", ["Paris"]))
    backend = CachingBackend(mock, ResponseCache(tmp_path / "cache.jsonl"))
    first = backend.generate(req("the capital of France?"))
    second = backend.generate(req("the capital of France?"))
    assert first.text == second.text == "Paris"
    assert first.from_cache is False
    assert second.from_cache is True
    assert mock.call_count == 1


def test_cache_persists_across_instances(tmp_path) -> None:
    path = tmp_path / "cache.jsonl"
    mock = make_mock(("q", ["answer one"]))
    CachingBackend(mock, ResponseCache(path)).generate(req("q"))

    fresh_mock = make_mock(("q", ["would be different"]))
    reloaded = CachingBackend(fresh_mock, ResponseCache(path))
    out = reloaded.generate(req("q"))
    assert out.text == "answer one"
    assert out.from_cache is True
    assert fresh_mock.call_count == 0


def test_cache_record_schema(tmp_path) -> None:
    path = tmp_path / "cache.jsonl"
    request = req("q", model_id="m9")
    CachingBackend(make_mock(("q", ["hi"])), ResponseCache(path)).generate(request)
    record = json.loads(path.read_text().splitlines()[0])
    assert set(record) == {"key", "model_id", "request", "response_text", "created_at"}
    assert record["key"] == cache_key(request)
    assert record["model_id"] == "m9"
    assert record["request"] == request_payload(request)
    assert record["response_text"] == "hi"


def test_nonzero_temperature_bypasses_cache(tmp_path) -> None:
    mock = make_mock(("q", ["one", "two", "three"]))
    backend = CachingBackend(mock, ResponseCache(tmp_path / "cache.jsonl"))
    sampled = [backend.generate(req("q", temperature=0.8)).text for _ in range(3)]
    assert sampled == ["one", "two", "three"]
    assert mock.call_count == 3


def test_cache_tolerates_torn_trailing_line(tmp_path) -> None:
    path = tmp_path / "cache.jsonl"
    backend = CachingBackend(make_mock(("q", ["hi"])), ResponseCache(path))
    backend.generate(req("q"))
    with path.open("a", encoding="utf-8") as fh:
        fh.write('{"key": "truncat')
    reloaded = ResponseCache(path)
    assert len(reloaded) == 1


# --- live HTTP backend ---------------------------------------------------------------


def _completion_payload(text: str) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 4},
    }


def test_http_backend_parses_completion() -> None:
    captured = {}

    def handler(request: httpx.Request) -> httpx.Response:
        captured["url"] = str(request.url)
        captured["body"] = json.loads(request.content)
        captured["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=_completion_payload("Paris "))

    backend = HttpChatBackend(
        "https://api.example.test/v1", "sk-test", transport=httpx.MockTransport(handler)
    )
    out = backend.generate(req("capital?", model_id="m1", temperature=0.0, max_tokens=77))
    assert out.text == "Paris"
    assert out.token_usage == (12, 4)
    assert captured["url"] == "https://api.example.test/v1/chat/completions"
    assert captured["auth"] == "Bearer sk-test"
    assert captured["body"]["model"] == "m1"
    assert captured["body"]["temperature"] == 0.0
    assert captured["body"]["max_tokens"] == 77
    assert captured["body"]["messages"] == [{"role": "user", "content": "capital?"}]
    assert "stop" not in captured["body"]


def test_http_backend_retries_then_succeeds() -> None:
    calls = {"n": 0}
    sleeps: list[float] = []

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        if calls["n"] < 3:
            return httpx.Response(429, text="slow down")
        return httpx.Response(200, json=_completion_payload("ok"))

    backend = HttpChatBackend(
        "https://api.example.test",
        transport=httpx.MockTransport(handler),
        sleep=sleeps.append,
    )
    assert backend.generate(req("q")).text == "ok"
    assert calls["n"] == 3
    assert sleeps == [1.0, 2.0]


def test_http_backend_surfaces_after_retry_budget() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(503, text="down")

    backend = HttpChatBackend(
        "https://api.example.test", transport=httpx.MockTransport(handler), sleep=lambda s: None
    )
    with pytest.raises(TransportError):
        backend.generate(req("q"))


def test_http_backend_does_not_retry_client_errors() -> None:
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        return httpx.Response(401, text="bad key")

    backend = HttpChatBackend(
        "https://api.example.test", transport=httpx.MockTransport(handler), sleep=lambda s: None
    )
    with pytest.raises(TransportError):
        backend.generate(req("q"))
    assert calls["n"] == 1


def test_http_backend_flags_malformed_payload() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"unexpected": True})

    backend = HttpChatBackend("https://api.example.test", transport=httpx.MockTransport(handler))
    with pytest.raises(ProtocolError):
        backend.generate(req("q"))


def test_http_backend_from_env_requires_base() -> None:
    with pytest.raises(ConfigurationError):
        HttpChatBackend.from_env(environ={})
